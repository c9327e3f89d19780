#pragma once

#include <vector>

#include "dlcfm/graph.hpp"

namespace dlcfm::loss {

// Auxiliary-informed prior N(mu0(u), Sigma0) with mu0(u) = (u_1..u_d, 0..0)
// and Sigma0 = diag(tau2 * I_d, I_{d_Z-d}). tau2 defaults to the inverse
// batch size upstream.
struct PriorSpec {
    double tau2 = 1.0 / 128.0;
    std::size_t d = 2;
    std::size_t d_Z = 8;

    void validate() const;
};

struct LossWeights {
    double beta = 8e-5;
    double lambda1 = 8e-2;
    double lambda2 = 1e-2;
    int K = 1;  // polynomial lift degree, 1 or 2

    void validate() const;
};

// mu0 is (n x d_Z), sigma0_diag is (1 x d_Z). u components must lie in
// [0, 1] (the normalization contract).
void prior_params(const ad::Array& u, const PriorSpec& spec, ad::Array& mu0, ad::Array& sigma0_diag);

// Closed-form KL between diagonal Gaussians, one value per batch item
// (n x 1). sigma0 entries must be positive.
ad::Array kl_gaussian_diag(const ad::Array& mu_q, const ad::Array& logvar_q, const ad::Array& mu0,
                           const ad::Array& sigma0_diag);

// ---------------------------------------------------------------------
// Correlation machinery. Columns are centered, lifted elementwise to
// powers 1..K of the centered values, standardized (twice, with epsilon
// guards, which keeps the statistics scale-free to ~1e-12 and maps
// exactly-constant columns to zero correlation), and correlated. All
// ordered degree pairs (k, k') including k == k' enter the aggregate,
// normalized by the exact number of summed terms.
// ---------------------------------------------------------------------

// Full lifted correlation matrix, (K*mv x K*mw), entries clamped to
// [-1, 1]. Row block k, column block k' holds Corr(V^k, W^k'). Requires
// n >= 3.
ad::Array batch_corr_lifted(const ad::Array& V, const ad::Array& W, int K);

// Mean |Corr| over all lifted entries; generic cross-dependence penalty.
double r0(const ad::Array& V, const ad::Array& W, int K);
// Mean of (1 - |Corr_ii|) over lifted diagonal entries; 0 at perfect
// one-to-one alignment. Column counts must match.
double r1(const ad::Array& v, const ad::Array& w, int K);

// Align penalty: r1 itself, so that smaller means better-aligned.
double align_penalty(const ad::Array& u_col, const ad::Array& mu_col, int K);
// Decorr penalty: r0.
double decorr_penalty(const ad::Array& A, const ad::Array& B, int K);

struct DlcfmTerms {
    double cfm = 0.0;
    double kl = 0.0;     // batch mean
    double align = 0.0;  // sum over guided dims
    double intra = 0.0;  // sum over guided dims
    double inter = 0.0;
    double total = 0.0;
};

// Full loss assembly on plain arrays (the training graph mirrors this
// computation node for node).
DlcfmTerms dlcfm_loss(double cfm_term, const ad::Array& mu, const ad::Array& logvar,
                      const ad::Array& u, const LossWeights& w, const PriorSpec& spec);

// ---- graph builders (differentiable routes used in training) ----

// Batch-mean KL scalar node; mu0 is an input/constant node, sigma0 a
// fixed diagonal.
ad::NodeId kl_node(ad::Graph& g, ad::NodeId mu, ad::NodeId logvar, ad::NodeId mu0,
                   const ad::Array& sigma0_diag);

// Standardized lifted blocks of an (n x m) node, one node per degree.
std::vector<ad::NodeId> lifted_standardized(ad::Graph& g, ad::NodeId x, int K);

ad::NodeId r0_node(ad::Graph& g, ad::NodeId V, ad::NodeId W, int K);
ad::NodeId r1_node(ad::Graph& g, ad::NodeId v, ad::NodeId w, int K);

struct DlcfmLossNodes {
    ad::NodeId cfm, kl, align, intra, inter, total;
};

// cfm is a scalar node produced by the flow-matching module; mu/logvar by
// the encoder; u/mu0 are bound inputs.
DlcfmLossNodes dlcfm_loss_node(ad::Graph& g, ad::NodeId cfm, ad::NodeId mu, ad::NodeId logvar,
                               ad::NodeId u, ad::NodeId mu0, const LossWeights& w,
                               const PriorSpec& spec);

}  // namespace dlcfm::loss

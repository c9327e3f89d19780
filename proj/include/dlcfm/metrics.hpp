#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlcfm/flow.hpp"

namespace dlcfm::metrics {

// Point clouds are (n x p) arrays; images enter flattened.

// Energy distance statistic 2 E|x-y| - E|x-x'| - E|y-y'| over Euclidean
// distances (V-statistic form, zero self-distances included).
double energy_distance(const ad::Array& X, const ad::Array& Y);

enum class Kernel { Gaussian, Laplacian };

// Biased MMD^2 with k(x,y) = exp(-|x-y|_2^2 / 2 s^2) (gaussian) or
// exp(-|x-y|_1 / s) (laplacian). bandwidth <= 0 selects the median
// heuristic over pooled pairwise distances (L2 resp. L1); all-identical
// pooled points make that heuristic undefined and raise an error.
double mmd(const ad::Array& X, const ad::Array& Y, Kernel kernel, double bandwidth = 0.0);

struct SinkhornResult {
    double cost = 0.0;          // <P, C> at the converged plan
    int iterations = 0;
    double marginal_violation = 0.0;  // L1 over both marginals
};

// Entropic OT with squared-Euclidean cost and uniform marginals,
// log-domain Sinkhorn-Knopp. Throws NumericError carrying the final
// violation when max_iters is exhausted before `tolerance` is met.
SinkhornResult sinkhorn_distance(const ad::Array& X, const ad::Array& Y, double reg,
                                 int max_iters = 20000, double tolerance = 1e-9);

// Exact OT cost for small equal-size clouds by enumerating all n!
// assignments; the brute-force oracle for the Sinkhorn route.
double exact_ot_assignment_cost(const ad::Array& X, const ad::Array& Y);

// Permutation-test quantile of the energy statistic under the pooled
// null; the one hypothesis-testing helper the module ships.
double energy_permutation_quantile(const ad::Array& X, const ad::Array& Y, int n_perms, double q,
                                   StreamRng& rng);

struct MetricReport {
    int repeats = 0;
    // order: sinkhorn, energy, mmd_gaussian, mmd_laplacian
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> sd;
};

// Repeated subsampled evaluation of the four distances; `reg_factor`
// scales the median cost into the Sinkhorn regularization.
MetricReport metric_suite(const ad::Array& X, const ad::Array& Y, int repeats, std::size_t subsample,
                          double reg_factor, StreamRng& rng);

// Pearson correlation; exactly 0 for zero-variance inputs.
double pearson(const std::vector<double>& x, const std::vector<double>& y);
// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct LatentAuxReport {
    ad::Array table;        // (n, 2 + n_dims): u1, u2, mu_1..mu_n
    ad::Array corr;         // (2 x d_Z), |pearson(u_j, mu_k)|
    std::size_t n_dims = 0;
};

// Per-item (u, encoder-mean) table plus the absolute correlation matrix
// between u and all latent means. holdout_only restricts to the
// catalog's holdout slice when it is nonempty.
LatentAuxReport latent_aux_report(const flow::ModelState& state, const data::Catalog& catalog,
                                  std::size_t n_dims, bool holdout_only);

// Pearson correlation between the first two guided columns.
double mass_conc_relation(const ad::Array& guided);

}  // namespace dlcfm::metrics

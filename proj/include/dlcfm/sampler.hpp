#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dlcfm/flow.hpp"

namespace dlcfm::ode {

enum class Method { Euler, Midpoint, Rk4 };

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);

struct SolverSpec {
    Method method = Method::Rk4;
    int n_ode = 100;

    void validate() const;
    double step_size() const { return 1.0 / static_cast<double>(n_ode); }
};

// A time-dependent field on a whole batch state.
using Field = std::function<ad::Array(const ad::Array& x, double t)>;

// One fixed step of the chosen method; aborts on non-finite state.
ad::Array ode_step(const Field& f, const ad::Array& x, double t, double h, Method method);

// n_ode steps from t = 0 to 1.
ad::Array integrate(const Field& f, ad::Array x0, const SolverSpec& spec);

// Batched forward evaluations of a trained vector field with a fixed
// latent batch; builds its graph once and rebinds per step.
class VfEvaluator {
  public:
    VfEvaluator(const flow::ModelState& state, std::size_t batch);
    // z rows stay fixed over the whole trajectory.
    ad::Array eval(const ad::Array& x, const ad::Array& z, double t);
    Field field_for(ad::Array z);

  private:
    const flow::ModelState& state_;
    flow::VfConfig vcfg_;
    ad::Graph g_;
    ad::NodeId out_;
    std::size_t batch_;
};

struct SampleResult {
    ad::Array images;               // (K, side, side)
    ad::Array z;                    // (K, d_Z)
    std::vector<std::size_t> source_idx;  // catalog rows the latents came from
};

// Shared generation core: integrate the learned field from the given
// noise draws under fixed latents.
ad::Array generate(const flow::ModelState& state, const ad::Array& z, const ad::Array& x0,
                   const SolverSpec& spec);

// Inference that reuses training data: select K training items, encode,
// draw z ~ q(z|x), integrate from fresh source noise. Items are drawn
// without replacement unless K exceeds the training split.
SampleResult sample(const flow::ModelState& state, const data::Catalog& catalog, std::size_t K,
                    const SolverSpec& spec, std::uint64_t seed);

enum class RecMode { Center, Tail };

// Controlled generation: z_aux pinned to the given values, z_rec taken
// from the aggregate posterior means of training items whose standardized
// rec-block norm falls below the median (center) or above the tail
// quantile (tail).
SampleResult sample_controlled(const flow::ModelState& state, const data::Catalog& catalog,
                               const std::vector<double>& z_aux, RecMode mode, double tail_quantile,
                               std::size_t K, const SolverSpec& spec, std::uint64_t seed);

// Latent traversal of guided dimension j over the grid values, all other
// guided dimensions held at 0.5, z_rec and the source noise shared across
// the row.
ad::Array traverse(const flow::ModelState& state, std::size_t j, const std::vector<double>& grid,
                   const ad::Array& z_rec_fixed, const SolverSpec& spec, std::uint64_t seed);

// Aggregate posterior mean of the reconstruction block over the training
// split; the default z_rec for traversals.
ad::Array mean_rec_latent(const flow::ModelState& state, const data::Catalog& catalog);

}  // namespace dlcfm::ode

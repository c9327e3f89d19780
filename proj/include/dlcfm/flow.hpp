#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dlcfm/adam.hpp"
#include "dlcfm/encoder.hpp"
#include "dlcfm/graph.hpp"
#include "dlcfm/halo.hpp"
#include "dlcfm/losses.hpp"
#include "dlcfm/rng.hpp"

namespace dlcfm::flow {

// Gaussian probability path around the straight-line interpolant,
// x_t ~ N(t x1 + (1-t) x0, sigma^2 I); sigma = 0 is the exact interpolant.
struct PathSpec {
    double sigma = 0.0;
    void validate() const;
};

// Conditional target field u_t(.|x0, x1) = x1 - x0, independent of t.
ad::Array target_field(const ad::Array& x0, const ad::Array& x1);

// Interpolant at a single time t for a whole batch.
ad::Array sample_path(const ad::Array& x0, const ad::Array& x1, double t, double sigma, StreamRng& rng);
// Per-row times t (n x 1).
ad::Array sample_path_rows(const ad::Array& x0, const ad::Array& x1, const ad::Array& t, double sigma,
                           StreamRng& rng);

// Vector-field network v(x_t, z, t): sinusoidal time features and a
// learned projection of z are added into one embedding, concatenated with
// x_t and passed through dense residual blocks. The output layer starts
// at zero so the initial field is identically zero.
struct VfConfig {
    std::size_t data_dim = 256;
    std::size_t d_Z = 8;
    std::size_t emb_dim = 64;
    std::size_t time_feat = 32;  // even
    std::size_t width = 192;
    std::size_t blocks = 2;
    double leaky = 0.01;
    bool zero_init_out = true;

    void validate() const;
};

ad::Array time_features(const std::vector<double>& t, std::size_t feat_dim);

void init_vf_params(const VfConfig& cfg, StreamRng rng, ad::ParamMap& params);
ad::NodeId build_vf(ad::Graph& g, const VfConfig& cfg, ad::NodeId x_t, ad::NodeId z, ad::NodeId tfeat);

// Desk-scale model: dense encoder + dense residual vector field.
struct ModelConfig {
    std::size_t side = 16;
    std::size_t d = 2;
    std::size_t d_Z = 8;
    std::vector<std::size_t> enc_hidden = {128, 128};
    std::size_t vf_width = 192;
    std::size_t vf_blocks = 2;
    std::size_t emb_dim = 64;
    std::size_t time_feat = 32;
    double leaky = 0.01;

    std::size_t data_dim() const { return side * side; }
    model::EncoderConfig encoder() const;
    VfConfig vf() const;
    void validate() const;
};

struct ModelState {
    ModelConfig cfg;
    ad::ParamMap params;
    ad::AdamState opt;
    std::int64_t step = 0;
};

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

// Forward of the vector field on plain arrays (shared by sampling and
// tests); t is one time for the whole batch.
ad::Array vf_forward(const ModelState& state, const ad::Array& x_t, const ad::Array& z, double t);

// CFM objective on a prepared batch: mean squared error between
// v(x_t, z, t) and the conditional target, averaged over batch and
// dimensions. rng feeds the path noise when sigma > 0.
double cfm_loss(const ModelState& state, const ad::Array& x0, const ad::Array& x1, const ad::Array& z,
                const ad::Array& t_rows, double sigma, StreamRng& rng);

struct TrainConfig {
    std::int64_t steps = 10000;
    std::size_t batch = 128;
    double lr = 2e-4;
    loss::LossWeights weights;
    double tau2 = 0.0;  // <= 0 selects the inverse-batch rule
    std::uint64_t seed = 7;
    std::int64_t checkpoint_interval = 0;  // 0 disables the hook
    double sigma = 0.0;
    std::size_t log_interval = 1;

    double resolved_tau2() const { return tau2 > 0.0 ? tau2 : 1.0 / static_cast<double>(batch); }
    void validate() const;
};

struct TraceRow {
    std::int64_t step;
    double cfm, kl, align, intra, inter, total;
};

using CheckpointHook = std::function<void(const ModelState&, std::int64_t)>;

// Joint training of encoder and vector field per the DL-CFM objective.
// Starts from state.step (so a resumed state continues bit-identically to
// the uninterrupted run) and stops at cfg.steps. The catalog's trailing
// n_holdout items are never drawn into batches.
void train(const data::Catalog& catalog, const TrainConfig& cfg, ModelState& state,
           std::vector<TraceRow>& trace, const CheckpointHook& hook = {});

}  // namespace dlcfm::flow

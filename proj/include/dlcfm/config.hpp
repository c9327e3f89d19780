#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "dlcfm/flow.hpp"
#include "dlcfm/halo.hpp"
#include "dlcfm/sampler.hpp"

namespace dlcfm::cfg {

struct SampleConfig {
    int n_ode = 100;
    ode::Method method = ode::Method::Rk4;
    std::size_t count = 64;
    double tail_quantile = 0.95;

    ode::SolverSpec solver() const { return {method, n_ode}; }
};

struct EvalConfig {
    int repeats = 10;
    std::size_t subsample = 256;
    double reg = 0.1;  // Sinkhorn regularization as a fraction of the median cost
};

// Whole-run configuration; one JSON document with sections data, model,
// train, sample, eval. Unknown keys are rejected with their path; missing
// keys take the defaults. data.seed is the global seed all RNG streams
// derive from.
struct RunConfig {
    data::DataConfig data;
    flow::ModelConfig model;
    flow::TrainConfig train;
    SampleConfig sample;
    EvalConfig eval;
    bool tau2_inv_batch = true;  // train.tau2 given as "inv-batch"

    void finalize();  // propagate shared fields and validate
};

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);

// ---- checkpoints ----

// DLT1 container with all parameter arrays, Adam state, the RunConfig
// echo, the resolved tau2 and the step counter.
void save_checkpoint(const std::string& path, const flow::ModelState& state, const RunConfig& config);

struct LoadedCheckpoint {
    flow::ModelState state;
    RunConfig config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dlcfm::cfg

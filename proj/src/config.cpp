#include "dlcfm/config.hpp"

#include <fstream>
#include <set>

#include "dlcfm/container.hpp"
#include "dlcfm/errors.hpp"

namespace dlcfm::cfg {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& path) {
    throw ConfigError("config: unknown key '" + path + "'");
}

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key()))
            bad_key(section.empty() ? it.key() : section + "." + it.key());
    }
}

template <typename T>
void fetch(const json& j, const char* key, const std::string& section, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value type for '" + section + "." + key + "'");
    }
}

void parse_data(const json& j, data::DataConfig& d) {
    check_keys(j, "data",
               {"n", "side", "seed", "mass_min", "mass_max", "conc_c0", "conc_alpha", "conc_sigma",
                "merger_prob", "ellipticity_max", "offset_sigma", "sec_amp_min", "sec_amp_max",
                "holdout_fraction"});
    fetch(j, "n", "data", d.n);
    fetch(j, "side", "data", d.side);
    fetch(j, "seed", "data", d.seed);
    fetch(j, "mass_min", "data", d.mass_min);
    fetch(j, "mass_max", "data", d.mass_max);
    fetch(j, "conc_c0", "data", d.conc_c0);
    fetch(j, "conc_alpha", "data", d.conc_alpha);
    fetch(j, "conc_sigma", "data", d.conc_sigma);
    fetch(j, "merger_prob", "data", d.merger_prob);
    fetch(j, "ellipticity_max", "data", d.ellipticity_max);
    fetch(j, "offset_sigma", "data", d.offset_sigma);
    fetch(j, "sec_amp_min", "data", d.sec_amp_min);
    fetch(j, "sec_amp_max", "data", d.sec_amp_max);
    fetch(j, "holdout_fraction", "data", d.holdout_fraction);
}

void parse_model(const json& j, flow::ModelConfig& m) {
    check_keys(j, "model",
               {"d", "d_Z", "enc_hidden", "vf_width", "vf_blocks", "emb_dim", "time_feat", "leaky"});
    fetch(j, "d", "model", m.d);
    fetch(j, "d_Z", "model", m.d_Z);
    fetch(j, "enc_hidden", "model", m.enc_hidden);
    fetch(j, "vf_width", "model", m.vf_width);
    fetch(j, "vf_blocks", "model", m.vf_blocks);
    fetch(j, "emb_dim", "model", m.emb_dim);
    fetch(j, "time_feat", "model", m.time_feat);
    fetch(j, "leaky", "model", m.leaky);
}

void parse_train(const json& j, flow::TrainConfig& t, bool& inv_batch) {
    check_keys(j, "train",
               {"steps", "batch", "lr", "beta", "lambda1", "lambda2", "K", "sigma", "tau2",
                "checkpoint_interval", "log_interval"});
    fetch(j, "steps", "train", t.steps);
    fetch(j, "batch", "train", t.batch);
    fetch(j, "lr", "train", t.lr);
    fetch(j, "beta", "train", t.weights.beta);
    fetch(j, "lambda1", "train", t.weights.lambda1);
    fetch(j, "lambda2", "train", t.weights.lambda2);
    fetch(j, "K", "train", t.weights.K);
    fetch(j, "sigma", "train", t.sigma);
    fetch(j, "checkpoint_interval", "train", t.checkpoint_interval);
    fetch(j, "log_interval", "train", t.log_interval);
    if (j.contains("tau2")) {
        const auto& v = j.at("tau2");
        if (v.is_string()) {
            if (v.get<std::string>() != "inv-batch")
                throw ConfigError("config: train.tau2 must be a positive number or \"inv-batch\"");
            inv_batch = true;
            t.tau2 = 0.0;
        } else if (v.is_number()) {
            inv_batch = false;
            t.tau2 = v.get<double>();
            if (!(t.tau2 > 0.0)) throw ConfigError("config: train.tau2 must be positive");
        } else {
            throw ConfigError("config: bad value type for 'train.tau2'");
        }
    }
}

void parse_sample(const json& j, SampleConfig& s) {
    check_keys(j, "sample", {"n_ode", "method", "count", "tail_quantile"});
    fetch(j, "n_ode", "sample", s.n_ode);
    if (j.contains("method")) s.method = ode::method_from_string(j.at("method").get<std::string>());
    fetch(j, "count", "sample", s.count);
    fetch(j, "tail_quantile", "sample", s.tail_quantile);
}

void parse_eval(const json& j, EvalConfig& e) {
    check_keys(j, "eval", {"repeats", "subsample", "reg"});
    fetch(j, "repeats", "eval", e.repeats);
    fetch(j, "subsample", "eval", e.subsample);
    fetch(j, "reg", "eval", e.reg);
}

}  // namespace

void RunConfig::finalize() {
    model.side = data.side;
    train.seed = data.seed;
    data.validate();
    model.validate();
    train.validate();
    if (model.d > 2) throw ConfigError("config: model.d exceeds the catalog's 2 auxiliary variables");
    if (sample.n_ode < 1) throw ConfigError("config: sample.n_ode must be >= 1");
    if (!(sample.tail_quantile > 0.5 && sample.tail_quantile < 1.0))
        throw ConfigError("config: sample.tail_quantile must be in (0.5, 1)");
    if (eval.repeats < 1) throw ConfigError("config: eval.repeats must be >= 1");
    if (eval.subsample < 2) throw ConfigError("config: eval.subsample must be >= 2");
    if (!(eval.reg > 0.0)) throw ConfigError("config: eval.reg must be positive");
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_keys(j, "", {"data", "model", "train", "sample", "eval"});
    RunConfig c;
    if (j.contains("data")) parse_data(j.at("data"), c.data);
    if (j.contains("model")) parse_model(j.at("model"), c.model);
    if (j.contains("train")) parse_train(j.at("train"), c.train, c.tau2_inv_batch);
    if (j.contains("sample")) parse_sample(j.at("sample"), c.sample);
    if (j.contains("eval")) parse_eval(j.at("eval"), c.eval);
    c.finalize();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: JSON parse error in '" + path + "': " + e.what());
    }
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["data"] = {
        {"n", c.data.n},
        {"side", c.data.side},
        {"seed", c.data.seed},
        {"mass_min", c.data.mass_min},
        {"mass_max", c.data.mass_max},
        {"conc_c0", c.data.conc_c0},
        {"conc_alpha", c.data.conc_alpha},
        {"conc_sigma", c.data.conc_sigma},
        {"merger_prob", c.data.merger_prob},
        {"ellipticity_max", c.data.ellipticity_max},
        {"offset_sigma", c.data.offset_sigma},
        {"sec_amp_min", c.data.sec_amp_min},
        {"sec_amp_max", c.data.sec_amp_max},
        {"holdout_fraction", c.data.holdout_fraction},
    };
    j["model"] = {
        {"d", c.model.d},
        {"d_Z", c.model.d_Z},
        {"enc_hidden", c.model.enc_hidden},
        {"vf_width", c.model.vf_width},
        {"vf_blocks", c.model.vf_blocks},
        {"emb_dim", c.model.emb_dim},
        {"time_feat", c.model.time_feat},
        {"leaky", c.model.leaky},
    };
    j["train"] = {
        {"steps", c.train.steps},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"beta", c.train.weights.beta},
        {"lambda1", c.train.weights.lambda1},
        {"lambda2", c.train.weights.lambda2},
        {"K", c.train.weights.K},
        {"sigma", c.train.sigma},
        {"checkpoint_interval", c.train.checkpoint_interval},
        {"log_interval", c.train.log_interval},
    };
    if (c.tau2_inv_batch) {
        j["train"]["tau2"] = "inv-batch";
    } else {
        j["train"]["tau2"] = c.train.tau2;
    }
    j["sample"] = {
        {"n_ode", c.sample.n_ode},
        {"method", ode::method_to_string(c.sample.method)},
        {"count", c.sample.count},
        {"tail_quantile", c.sample.tail_quantile},
    };
    j["eval"] = {
        {"repeats", c.eval.repeats},
        {"subsample", c.eval.subsample},
        {"reg", c.eval.reg},
    };
    return j;
}

void save_checkpoint(const std::string& path, const flow::ModelState& state, const RunConfig& config) {
    io::Container c;
    for (const auto& [name, a] : state.params) c.put("p." + name, a);
    for (const auto& [name, a] : state.opt.m) c.put("adam.m." + name, a);
    for (const auto& [name, a] : state.opt.v) c.put("adam.v." + name, a);
    c.meta = {
        {"kind", "checkpoint"},
        {"step", state.step},
        {"tau2", config.train.resolved_tau2()},
        {"adam",
         {{"lr", state.opt.lr},
          {"beta1", state.opt.beta1},
          {"beta2", state.opt.beta2},
          {"eps", state.opt.eps},
          {"step", state.opt.step}}},
        {"rng", {{"seed", config.data.seed}, {"stream", "counter-based (seed, label, step)"}}},
        {"config", run_config_to_json(config)},
    };
    io::write_container(c, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    io::Container c = io::read_container(path);
    if (!c.meta.contains("kind") || c.meta["kind"] != "checkpoint")
        throw IoError("'" + path + "' is not a checkpoint container");

    LoadedCheckpoint out;
    try {
        out.config = run_config_from_json(c.meta.at("config"));
        out.state.cfg = out.config.model;
        out.state.step = c.meta.at("step").get<std::int64_t>();
        const auto& adam = c.meta.at("adam");
        out.state.opt.lr = adam.at("lr").get<double>();
        out.state.opt.beta1 = adam.at("beta1").get<double>();
        out.state.opt.beta2 = adam.at("beta2").get<double>();
        out.state.opt.eps = adam.at("eps").get<double>();
        out.state.opt.step = adam.at("step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint header in '" + path + "' is malformed: " + e.what());
    }

    for (const auto& [name, a] : c.arrays) {
        if (name.rfind("p.", 0) == 0) {
            out.state.params[name.substr(2)] = a;
        } else if (name.rfind("adam.m.", 0) == 0) {
            out.state.opt.m[name.substr(7)] = a;
        } else if (name.rfind("adam.v.", 0) == 0) {
            out.state.opt.v[name.substr(7)] = a;
        } else {
            throw IoError("checkpoint '" + path + "': unexpected array '" + name + "'");
        }
    }
    return out;
}

}  // namespace dlcfm::cfg

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dlcfm/config.hpp"
#include "dlcfm/container.hpp"
#include "dlcfm/errors.hpp"
#include "dlcfm/flow.hpp"
#include "dlcfm/halo.hpp"
#include "dlcfm/image_stats.hpp"
#include "dlcfm/metrics.hpp"
#include "dlcfm/sampler.hpp"
#include "dlcfm/selfcheck.hpp"

namespace {

using namespace dlcfm;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path) {
    cfg::RunConfig rc = cfg::load_run_config(config_path);
    data::Catalog cat = data::build_catalog(rc.data);
    data::write_catalog(cat, out_path);

    std::size_t mergers = 0;
    for (const auto& p : cat.params) mergers += p.merger ? 1 : 0;
    std::cout << "catalog: n=" << cat.size() << " side=" << cat.side
              << " holdout=" << cat.n_holdout << "\n"
              << "  log10-mass range  [" << fmt(cat.aux_min[0]) << ", " << fmt(cat.aux_max[0]) << "]\n"
              << "  concentration     [" << fmt(cat.aux_min[1]) << ", " << fmt(cat.aux_max[1]) << "]\n"
              << "  merger fraction   " << fmt(static_cast<double>(mergers) / static_cast<double>(cat.size()))
              << "\n  wrote " << out_path << "\n";
    return 0;
}

void write_loss_csv(const std::string& path, const std::vector<flow::TraceRow>& trace) {
    std::ofstream out = open_out(path);
    out << "step,cfm_term,kl_term,align_term,intra_term,inter_term,total\n";
    for (const auto& r : trace)
        out << r.step << "," << fmt(r.cfm) << "," << fmt(r.kl) << "," << fmt(r.align) << ","
            << fmt(r.intra) << "," << fmt(r.inter) << "," << fmt(r.total) << "\n";
}

int cmd_train(const std::string& config_path, const std::string& catalog_path,
              const std::string& out_path, const std::string& resume_path,
              std::string loss_csv_path) {
    cfg::RunConfig rc = cfg::load_run_config(config_path);
    data::Catalog cat = data::read_catalog(catalog_path);

    flow::ModelState state;
    if (resume_path.empty()) {
        state = flow::init_model(rc.model, rc.data.seed);
    } else {
        cfg::LoadedCheckpoint loaded = cfg::load_checkpoint(resume_path);
        state = std::move(loaded.state);
        if (cfg::run_config_to_json(loaded.config)["model"] != cfg::run_config_to_json(rc)["model"])
            throw ConfigError("resume: checkpoint model section differs from config");
        std::cout << "resuming from step " << state.step << "\n";
    }

    auto hook = [&](const flow::ModelState& s, std::int64_t step) {
        cfg::save_checkpoint(out_path + ".step" + std::to_string(step), s, rc);
    };

    std::vector<flow::TraceRow> trace;
    flow::train(cat, rc.train, state, trace, hook);
    cfg::save_checkpoint(out_path, state, rc);
    if (loss_csv_path.empty()) loss_csv_path = out_path + ".loss.csv";
    write_loss_csv(loss_csv_path, trace);

    std::cout << "trained to step " << state.step << "; tau2=" << fmt(rc.train.resolved_tau2()) << "\n";
    if (!trace.empty()) {
        const auto& last = trace.back();
        std::cout << "final loss: total=" << fmt(last.total) << " cfm=" << fmt(last.cfm)
                  << " kl=" << fmt(last.kl) << " align=" << fmt(last.align)
                  << " intra=" << fmt(last.intra) << " inter=" << fmt(last.inter) << "\n";
    }
    std::cout << "wrote " << out_path << " and " << loss_csv_path << "\n";
    return 0;
}

void write_summary_csv(const std::string& path, const ad::Array& images, std::size_t side,
                       const std::vector<double>* grid) {
    std::ofstream out = open_out(path);
    if (grid)
        out << "index,grid_value,flux,half_light_radius,local_maxima\n";
    else
        out << "index,flux,half_light_radius,local_maxima\n";
    const std::size_t K = images.shape[0], p = side * side;
    for (std::size_t i = 0; i < K; ++i) {
        std::span<const double> img(images.data.data() + i * p, p);
        out << i << ",";
        if (grid) out << fmt((*grid)[i]) << ",";
        out << fmt(img::total_flux(img)) << "," << fmt(img::half_light_radius(img, side)) << ","
            << img::local_maxima_count(img, side) << "\n";
    }
}

int cmd_sample(const std::string& ckpt_path, const std::string& catalog_path,
               const std::string& out_path, const std::string& summary_csv,
               std::vector<double> aux, const std::string& rec_mode, int traverse_dim, int grid_n,
               std::size_t count, double tail_quantile, std::int64_t seed_override) {
    cfg::LoadedCheckpoint loaded = cfg::load_checkpoint(ckpt_path);
    const cfg::RunConfig& rc = loaded.config;
    data::Catalog cat = data::read_catalog(catalog_path);
    if (cat.side != loaded.state.cfg.side)
        throw ConfigError("sample: catalog side does not match the checkpoint model");

    const bool do_traverse = traverse_dim >= 0;
    const bool do_controlled = !aux.empty() || !rec_mode.empty();
    if (do_traverse && do_controlled)
        throw ConfigError("sample: --traverse conflicts with --aux/--rec-mode");
    if (!aux.empty() && rec_mode.empty())
        throw ConfigError("sample: --aux requires --rec-mode center|tail");
    if (aux.empty() && !rec_mode.empty())
        throw ConfigError("sample: --rec-mode requires --aux");

    const ode::SolverSpec solver = rc.sample.solver();
    const std::uint64_t seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                                  : rc.data.seed;
    const std::size_t K = count > 0 ? count : rc.sample.count;
    const double tq = tail_quantile > 0 ? tail_quantile : rc.sample.tail_quantile;

    io::Container dump;
    nlohmann::json request = {{"n_ode", solver.n_ode},
                              {"method", ode::method_to_string(solver.method)},
                              {"seed", seed}};
    std::vector<double> grid;

    if (do_traverse) {
        const int G = grid_n > 0 ? grid_n : 8;
        for (int i = 0; i < G; ++i)
            grid.push_back(G == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(G - 1));
        ad::Array z_rec = ode::mean_rec_latent(loaded.state, cat);
        ad::Array images = ode::traverse(loaded.state, static_cast<std::size_t>(traverse_dim), grid,
                                         z_rec, solver, seed);
        request["mode"] = "traverse";
        request["dim"] = traverse_dim;
        request["grid"] = grid;
        dump.put("images", images);
        dump.put("z_rec", z_rec);
    } else if (do_controlled) {
        if (rec_mode != "tail" && rec_mode != "center")
            throw ConfigError("sample: --rec-mode must be center or tail");
        ode::RecMode mode = rec_mode == "tail" ? ode::RecMode::Tail : ode::RecMode::Center;
        ode::SampleResult res =
            ode::sample_controlled(loaded.state, cat, aux, mode, tq, K, solver, seed);
        request["mode"] = "controlled";
        request["aux"] = aux;
        request["rec_mode"] = rec_mode;
        request["tail_quantile"] = tq;
        request["count"] = K;
        dump.put("images", res.images);
        dump.put("z", res.z);
    } else {
        ode::SampleResult res = ode::sample(loaded.state, cat, K, solver, seed);
        request["mode"] = "encode-training-data";
        request["count"] = K;
        dump.put("images", res.images);
        dump.put("z", res.z);
    }

    dump.meta = {{"kind", "samples"}, {"side", cat.side}, {"request", request}};
    io::write_container(dump, out_path);

    const ad::Array& images = dump.get("images");
    if (!summary_csv.empty())
        write_summary_csv(summary_csv, images, cat.side, do_traverse ? &grid : nullptr);
    std::cout << "wrote " << images.shape[0] << " samples to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& catalog_path,
             const std::string& samples_path, bool generate, const std::string& out_metrics,
             const std::string& out_latent, std::size_t latent_dims) {
    cfg::LoadedCheckpoint loaded = cfg::load_checkpoint(ckpt_path);
    const cfg::RunConfig& rc = loaded.config;
    data::Catalog cat = data::read_catalog(catalog_path);
    const std::size_t p = cat.pixel_count();

    if (samples_path.empty() && !generate)
        throw ConfigError("eval: provide --samples DUMP or --generate");
    if (!samples_path.empty() && generate)
        throw ConfigError("eval: --samples conflicts with --generate");

    ad::Array gen;
    if (generate) {
        ode::SampleResult res =
            ode::sample(loaded.state, cat, rc.sample.count, rc.sample.solver(), rc.data.seed);
        gen = res.images.reshaped({res.images.shape[0], p});
    } else {
        io::Container dump = io::read_container(samples_path);
        const ad::Array& imgs = dump.get("images");
        if (imgs.rank() != 3 || imgs.shape[1] != cat.side || imgs.shape[2] != cat.side)
            throw ConfigError("eval: sample dump dimensions do not match the catalog");
        gen = imgs.reshaped({imgs.shape[0], p});
    }

    // Reference cloud: the holdout slice when present, else the full set.
    const std::size_t lo = cat.n_holdout > 0 ? cat.n_train() : 0;
    const std::size_t n_ref = cat.size() - lo;
    ad::Array ref({n_ref, p});
    std::copy_n(cat.images.data.begin() + static_cast<std::ptrdiff_t>(lo * p), n_ref * p,
                ref.data.begin());

    // Pure-noise baseline of the same size as the generated cloud.
    StreamRng noise_rng(rc.data.seed, "eval.noise");
    ad::Array noise({gen.shape[0], p});
    for (double& v : noise.data) v = noise_rng.normal();

    StreamRng suite_rng(rc.data.seed, "eval.suite");
    StreamRng suite_rng2(rc.data.seed, "eval.suite.noise");
    metrics::MetricReport rep =
        metrics::metric_suite(gen, ref, rc.eval.repeats, rc.eval.subsample, rc.eval.reg, suite_rng);
    metrics::MetricReport base =
        metrics::metric_suite(noise, ref, rc.eval.repeats, rc.eval.subsample, rc.eval.reg, suite_rng2);

    {
        std::ofstream out = open_out(out_metrics);
        out << "metric,mean,sd,noise_mean,noise_sd,repeats\n";
        for (std::size_t m = 0; m < rep.names.size(); ++m)
            out << rep.names[m] << "," << fmt(rep.mean[m]) << "," << fmt(rep.sd[m]) << ","
                << fmt(base.mean[m]) << "," << fmt(base.sd[m]) << "," << rep.repeats << "\n";
    }

    metrics::LatentAuxReport lar =
        metrics::latent_aux_report(loaded.state, cat, latent_dims, /*holdout_only=*/true);
    {
        std::ofstream out = open_out(out_latent);
        out << "u1,u2";
        for (std::size_t j = 0; j < lar.n_dims; ++j) out << ",mu_" << (j + 1);
        out << "\n";
        for (std::size_t i = 0; i < lar.table.shape[0]; ++i) {
            for (std::size_t j = 0; j < lar.table.shape[1]; ++j) {
                if (j) out << ",";
                out << fmt(lar.table.at(i, j));
            }
            out << "\n";
        }
    }

    std::cout << "metrics (model vs holdout / noise vs holdout):\n";
    for (std::size_t m = 0; m < rep.names.size(); ++m)
        std::cout << "  " << rep.names[m] << ": " << fmt(rep.mean[m]) << " +- " << fmt(rep.sd[m])
                  << "   noise: " << fmt(base.mean[m]) << "\n";
    std::cout << "|corr(u, mu)|:\n";
    for (std::size_t a = 0; a < 2; ++a) {
        std::cout << "  u" << (a + 1) << ":";
        for (std::size_t j = 0; j < lar.corr.cols(); ++j) std::cout << " " << fmt(lar.corr.at(a, j));
        std::cout << "\n";
    }
    std::cout << "wrote " << out_metrics << " and " << out_latent << "\n";
    return 0;
}

int cmd_selfcheck(const std::string& inject_fault) {
    const auto items = run_selfcheck(inject_fault);
    bool all_pass = true;
    for (const auto& it : items) {
        all_pass = all_pass && it.pass;
        std::cout << (it.pass ? "[PASS] " : "[FAIL] ") << it.name << ": measured=" << fmt(it.measured)
                  << " threshold=" << fmt(it.threshold) << " (" << it.detail << ")\n";
    }
    if (!all_pass) {
        std::cout << "selfcheck FAILED\n";
        return 2;
    }
    std::cout << "selfcheck passed (" << items.size() << " checks)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DL-CFM: disentangled latent conditional flow matching at desk scale"};
    app.require_subcommand(1);

    std::string config_path, out_path, catalog_path, ckpt_path, resume_path, loss_csv;
    std::string samples_path, out_metrics = "metrics.csv", out_latent = "latent.csv";
    std::string rec_mode, inject_fault, summary_csv;
    std::vector<double> aux;
    int traverse_dim = -1, grid_n = -1;
    std::size_t count = 0, latent_dims = 5;
    double tail_quantile = -1.0;
    std::int64_t seed_override = -1;
    bool generate = false;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic halo catalog");
    gen->add_option("--config", config_path, "run config JSON")->required();
    gen->add_option("--out", out_path, "output catalog (DLT1)")->required();

    auto* tr = app.add_subcommand("train", "train encoder + vector field");
    tr->add_option("--config", config_path, "run config JSON")->required();
    tr->add_option("--catalog", catalog_path, "catalog (DLT1)")->required();
    tr->add_option("--out", out_path, "output checkpoint (DLT1)")->required();
    tr->add_option("--resume", resume_path, "checkpoint to continue from");
    tr->add_option("--loss-csv", loss_csv, "loss trace CSV path (default <out>.loss.csv)");

    auto* sa = app.add_subcommand("sample", "draw samples / controlled samples / traversals");
    sa->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    sa->add_option("--catalog", catalog_path, "catalog (DLT1)")->required();
    sa->add_option("--out", out_path, "output dump (DLT1)")->required();
    sa->add_option("--summary-csv", summary_csv, "per-image summary statistics CSV");
    sa->add_option("--aux", aux, "fixed z_aux values")->expected(-1);
    sa->add_option("--rec-mode", rec_mode, "center|tail");
    sa->add_option("--tail-quantile", tail_quantile, "tail cutoff quantile");
    sa->add_option("--traverse", traverse_dim, "guided dimension to traverse");
    sa->add_option("--grid", grid_n, "traversal grid size (default 8)");
    sa->add_option("--count", count, "number of samples");
    sa->add_option("--seed", seed_override, "sampling seed (default: config seed)");

    auto* ev = app.add_subcommand("eval", "distance metrics + latent-auxiliary report");
    ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    ev->add_option("--catalog", catalog_path, "catalog (DLT1)")->required();
    ev->add_option("--samples", samples_path, "sample dump to evaluate");
    ev->add_flag("--generate", generate, "generate samples on the fly");
    ev->add_option("--out-metrics", out_metrics, "metric report CSV");
    ev->add_option("--out-latent", out_latent, "latent-auxiliary table CSV");
    ev->add_option("--latent-dims", latent_dims, "latent dims in the table (default 5)");

    auto* sc = app.add_subcommand("selfcheck", "run numerical health checks");
    sc->add_option("--inject-fault", inject_fault, "corrupt a named check (testing aid)");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(config_path, out_path);
        if (tr->parsed()) return cmd_train(config_path, catalog_path, out_path, resume_path, loss_csv);
        if (sa->parsed())
            return cmd_sample(ckpt_path, catalog_path, out_path, summary_csv, aux, rec_mode,
                              traverse_dim, grid_n, count, tail_quantile, seed_override);
        if (ev->parsed())
            return cmd_eval(ckpt_path, catalog_path, samples_path, generate, out_metrics, out_latent,
                            latent_dims);
        if (sc->parsed()) return cmd_selfcheck(inject_fault);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const dlcfm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const dlcfm::NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const dlcfm::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

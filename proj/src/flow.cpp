#include "dlcfm/flow.hpp"

#include <cmath>

#include "dlcfm/errors.hpp"

namespace dlcfm::flow {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void PathSpec::validate() const {
    if (sigma < 0.0) throw ConfigError("path: sigma must be >= 0");
}

ad::Array target_field(const ad::Array& x0, const ad::Array& x1) {
    if (x0.shape != x1.shape)
        throw NumericError("target_field: shape mismatch: " + ad::shape_str(x0.shape) + " vs " +
                           ad::shape_str(x1.shape));
    ad::Array u = x1;
    for (std::size_t i = 0; i < u.numel(); ++i) u.data[i] -= x0.data[i];
    return u;
}

ad::Array sample_path(const ad::Array& x0, const ad::Array& x1, double t, double sigma, StreamRng& rng) {
    if (x0.shape != x1.shape)
        throw NumericError("sample_path: shape mismatch: " + ad::shape_str(x0.shape) + " vs " +
                           ad::shape_str(x1.shape));
    if (!(t >= 0.0 && t <= 1.0)) throw NumericError("sample_path: t=" + std::to_string(t) + " outside [0, 1]");
    if (sigma < 0.0) throw NumericError("sample_path: sigma must be >= 0");
    ad::Array xt = x0;
    for (std::size_t i = 0; i < xt.numel(); ++i) {
        xt.data[i] = t * x1.data[i] + (1.0 - t) * x0.data[i];
        if (sigma > 0.0) xt.data[i] += sigma * rng.normal();
    }
    return xt;
}

ad::Array sample_path_rows(const ad::Array& x0, const ad::Array& x1, const ad::Array& t, double sigma,
                           StreamRng& rng) {
    if (x0.shape != x1.shape)
        throw NumericError("sample_path: shape mismatch: " + ad::shape_str(x0.shape) + " vs " +
                           ad::shape_str(x1.shape));
    const std::size_t n = x0.rows(), p = x0.cols();
    if (t.numel() != n) throw NumericError("sample_path: need one t per row");
    ad::Array xt({n, p});
    for (std::size_t i = 0; i < n; ++i) {
        const double ti = t.data[i];
        if (!(ti >= 0.0 && ti <= 1.0))
            throw NumericError("sample_path: t=" + std::to_string(ti) + " outside [0, 1]");
        for (std::size_t j = 0; j < p; ++j) {
            double v = ti * x1.at(i, j) + (1.0 - ti) * x0.at(i, j);
            if (sigma > 0.0) v += sigma * rng.normal();
            xt.at(i, j) = v;
        }
    }
    return xt;
}

void VfConfig::validate() const {
    if (data_dim == 0) throw ConfigError("vf: data_dim must be positive");
    if (time_feat < 2 || time_feat % 2 != 0) throw ConfigError("vf: time_feat must be even and >= 2");
    if (emb_dim == 0 || width == 0) throw ConfigError("vf: emb_dim and width must be positive");
}

ad::Array time_features(const std::vector<double>& t, std::size_t feat_dim) {
    if (feat_dim < 2 || feat_dim % 2 != 0) throw NumericError("time_features: feat_dim must be even >= 2");
    const std::size_t half = feat_dim / 2;
    ad::Array out({t.size(), feat_dim});
    for (std::size_t k = 0; k < half; ++k) {
        // geometric frequencies from 1 to 100 cycles over [0, 1]
        const double f = half == 1 ? 1.0 : std::exp(std::log(100.0) * static_cast<double>(k) /
                                                    static_cast<double>(half - 1));
        const double omega = 2.0 * kPi * f;
        for (std::size_t i = 0; i < t.size(); ++i) {
            out.at(i, 2 * k) = std::sin(omega * t[i]);
            out.at(i, 2 * k + 1) = std::cos(omega * t[i]);
        }
    }
    return out;
}

namespace {

ad::Array gaussian_matrix(StreamRng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    ad::Array w({rows, cols});
    for (double& v : w.data) v = std_dev * rng.normal();
    return w;
}

double kaiming_std(std::size_t fan_in, double leaky) {
    return std::sqrt(2.0 / (static_cast<double>(fan_in) * (1.0 + leaky * leaky)));
}

}  // namespace

void init_vf_params(const VfConfig& cfg, StreamRng rng, ad::ParamMap& params) {
    cfg.validate();
    params["vf.wt"] = gaussian_matrix(rng, cfg.time_feat, cfg.emb_dim, kaiming_std(cfg.time_feat, cfg.leaky));
    params["vf.wz"] = gaussian_matrix(rng, cfg.d_Z, cfg.emb_dim, kaiming_std(cfg.d_Z, cfg.leaky));
    params["vf.be"] = ad::Array({1, cfg.emb_dim});

    const std::size_t in_dim = cfg.data_dim + cfg.emb_dim;
    params["vf.win"] = gaussian_matrix(rng, in_dim, cfg.width, kaiming_std(in_dim, cfg.leaky));
    params["vf.bin"] = ad::Array({1, cfg.width});
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = "vf.r" + std::to_string(b);
        params[p + ".w1"] = gaussian_matrix(rng, cfg.width, cfg.width, kaiming_std(cfg.width, cfg.leaky));
        params[p + ".b1"] = ad::Array({1, cfg.width});
        params[p + ".w2"] = gaussian_matrix(rng, cfg.width, cfg.width, kaiming_std(cfg.width, cfg.leaky));
        params[p + ".b2"] = ad::Array({1, cfg.width});
    }
    if (cfg.zero_init_out) {
        params["vf.wout"] = ad::Array({cfg.width, cfg.data_dim});
    } else {
        params["vf.wout"] =
            gaussian_matrix(rng, cfg.width, cfg.data_dim, std::sqrt(1.0 / static_cast<double>(cfg.width)));
    }
    params["vf.bout"] = ad::Array({1, cfg.data_dim});
}

ad::NodeId build_vf(ad::Graph& g, const VfConfig& cfg, ad::NodeId x_t, ad::NodeId z, ad::NodeId tfeat) {
    cfg.validate();
    ad::NodeId wt = g.param("vf.wt", {cfg.time_feat, cfg.emb_dim});
    ad::NodeId wz = g.param("vf.wz", {cfg.d_Z, cfg.emb_dim});
    ad::NodeId be = g.param("vf.be", {1, cfg.emb_dim});

    // latent embedding added to the time embedding
    ad::NodeId emb_pre = g.add(g.matmul(tfeat, wt), g.matmul(z, wz));
    ad::NodeId emb = g.leaky_relu(g.add(emb_pre, g.broadcast(be, g.shape(emb_pre))), cfg.leaky);

    ad::NodeId h = g.concat_cols(x_t, emb);
    ad::NodeId win = g.param("vf.win", {cfg.data_dim + cfg.emb_dim, cfg.width});
    ad::NodeId bin = g.param("vf.bin", {1, cfg.width});
    h = g.leaky_relu(g.affine(h, win, bin), cfg.leaky);

    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = "vf.r" + std::to_string(b);
        ad::NodeId w1 = g.param(p + ".w1", {cfg.width, cfg.width});
        ad::NodeId b1 = g.param(p + ".b1", {1, cfg.width});
        ad::NodeId w2 = g.param(p + ".w2", {cfg.width, cfg.width});
        ad::NodeId b2 = g.param(p + ".b2", {1, cfg.width});
        ad::NodeId t1 = g.leaky_relu(g.affine(h, w1, b1), cfg.leaky);
        h = g.add(h, g.affine(t1, w2, b2));
    }

    ad::NodeId wout = g.param("vf.wout", {cfg.width, cfg.data_dim});
    ad::NodeId bout = g.param("vf.bout", {1, cfg.data_dim});
    return g.affine(h, wout, bout);
}

model::EncoderConfig ModelConfig::encoder() const {
    model::EncoderConfig e;
    e.in_dim = data_dim();
    e.d = d;
    e.d_Z = d_Z;
    e.hidden = enc_hidden;
    e.leaky = leaky;
    return e;
}

VfConfig ModelConfig::vf() const {
    VfConfig v;
    v.data_dim = data_dim();
    v.d_Z = d_Z;
    v.emb_dim = emb_dim;
    v.time_feat = time_feat;
    v.width = vf_width;
    v.blocks = vf_blocks;
    v.leaky = leaky;
    return v;
}

void ModelConfig::validate() const {
    encoder().validate();
    vf().validate();
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelState s;
    s.cfg = cfg;
    model::init_encoder_params(cfg.encoder(), StreamRng(seed, "init.enc"), s.params);
    init_vf_params(cfg.vf(), StreamRng(seed, "init.vf"), s.params);
    return s;
}

ad::Array vf_forward(const ModelState& state, const ad::Array& x_t, const ad::Array& z, double t) {
    const VfConfig vcfg = state.cfg.vf();
    const std::size_t n = x_t.rows();
    ad::Graph g;
    ad::NodeId xin = g.input("x_t", x_t.shape);
    ad::NodeId zin = g.input("z", z.shape);
    ad::NodeId tf = g.input("tfeat", {n, vcfg.time_feat});
    ad::NodeId v = build_vf(g, vcfg, xin, zin, tf);
    model::bind_params(g, state.params);
    g.bind("x_t", x_t);
    g.bind("z", z);
    g.bind("tfeat", time_features(std::vector<double>(n, t), vcfg.time_feat));
    ad::Array out = g.forward(v);
    if (!out.all_finite()) throw NumericError("vf_forward: non-finite output");
    return out;
}

double cfm_loss(const ModelState& state, const ad::Array& x0, const ad::Array& x1, const ad::Array& z,
                const ad::Array& t_rows, double sigma, StreamRng& rng) {
    if (x0.numel() == 0) throw NumericError("cfm_loss: empty batch");
    const ad::Array xt = sample_path_rows(x0, x1, t_rows, sigma, rng);
    const ad::Array target = target_field(x0, x1);

    const VfConfig vcfg = state.cfg.vf();
    const std::size_t n = x0.rows();
    std::vector<double> ts(t_rows.data.begin(), t_rows.data.end());

    ad::Graph g;
    ad::NodeId xin = g.input("x_t", xt.shape);
    ad::NodeId zin = g.input("z", z.shape);
    ad::NodeId tf = g.input("tfeat", {n, vcfg.time_feat});
    ad::NodeId tgt = g.input("target", target.shape);
    ad::NodeId v = build_vf(g, vcfg, xin, zin, tf);
    ad::NodeId obj = g.mean(g.square(g.sub(v, tgt)));
    model::bind_params(g, state.params);
    g.bind("x_t", xt);
    g.bind("z", z);
    g.bind("tfeat", time_features(ts, vcfg.time_feat));
    g.bind("target", target);
    return g.forward(obj).data[0];
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train.steps must be >= 0");
    if (batch < 3) throw ConfigError("train.batch must be >= 3 (correlation penalties undefined below)");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (sigma < 0.0) throw ConfigError("train.sigma must be >= 0");
    if (log_interval < 1) throw ConfigError("train.log_interval must be >= 1");
    weights.validate();
}

void train(const data::Catalog& catalog, const TrainConfig& cfg, ModelState& state,
           std::vector<TraceRow>& trace, const CheckpointHook& hook) {
    cfg.validate();
    state.cfg.validate();
    if (catalog.size() == 0) throw NumericError("train: empty catalog");
    if (catalog.side != state.cfg.side)
        throw ConfigError("train: catalog side " + std::to_string(catalog.side) +
                          " != model side " + std::to_string(state.cfg.side));
    const std::size_t n_train = catalog.n_train();
    if (n_train == 0) throw ConfigError("train: no training items left after holdout");
    if (state.cfg.d > catalog.d)
        throw ConfigError("train: model d exceeds catalog auxiliary dimension");

    loss::PriorSpec prior;
    prior.tau2 = cfg.resolved_tau2();
    prior.d = state.cfg.d;
    prior.d_Z = state.cfg.d_Z;
    prior.validate();

    const std::size_t B = cfg.batch;
    const std::size_t p = state.cfg.data_dim();
    const std::size_t dz = state.cfg.d_Z;
    const std::size_t d = state.cfg.d;
    const VfConfig vcfg = state.cfg.vf();

    // One graph, rebound every step.
    ad::Graph g;
    ad::NodeId x = g.input("x", {B, p});
    ad::NodeId u = g.input("u", {B, d});
    ad::NodeId mu0 = g.input("mu0", {B, dz});
    ad::NodeId eps = g.input("eps", {B, dz});
    ad::NodeId xt = g.input("x_t", {B, p});
    ad::NodeId tf = g.input("tfeat", {B, vcfg.time_feat});
    ad::NodeId tgt = g.input("target", {B, p});

    model::EncoderHeads heads = build_encoder(g, state.cfg.encoder(), x);
    ad::NodeId z = model::reparameterize(g, heads.mu, heads.logvar, eps);
    ad::NodeId v = build_vf(g, vcfg, xt, z, tf);
    ad::NodeId cfm = g.mean(g.square(g.sub(v, tgt)));
    loss::DlcfmLossNodes terms =
        loss::dlcfm_loss_node(g, cfm, heads.mu, heads.logvar, u, mu0, cfg.weights, prior);

    ad::Array xb({B, p}), ub({B, d}), mu0b({B, dz}), epsb({B, dz});
    ad::Array x0b({B, p}), x1b({B, p});
    std::vector<double> ts(B);

    StreamRng train_stream(cfg.seed, "train");
    for (std::int64_t step = state.step; step < cfg.steps; ++step) {
        StreamRng rng = train_stream.fork(static_cast<std::uint64_t>(step));

        // Batch draw order is fixed: indices, eps, x0, t, then path noise.
        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t idx = rng.uniform_index(n_train);
            const double* img = catalog.images.data.data() + idx * p;
            std::copy_n(img, p, xb.data.begin() + static_cast<std::ptrdiff_t>(i * p));
            std::copy_n(img, p, x1b.data.begin() + static_cast<std::ptrdiff_t>(i * p));
            for (std::size_t j = 0; j < d; ++j) ub.at(i, j) = catalog.aux.data[idx * catalog.d + j];
        }
        for (double& e : epsb.data) e = rng.normal();
        for (double& v0 : x0b.data) v0 = rng.normal();
        for (double& t : ts) t = rng.uniform();

        ad::Array t_rows({B, 1});
        std::copy(ts.begin(), ts.end(), t_rows.data.begin());
        ad::Array xtb = sample_path_rows(x0b, x1b, t_rows, cfg.sigma, rng);
        ad::Array tgtb = target_field(x0b, x1b);

        std::fill(mu0b.data.begin(), mu0b.data.end(), 0.0);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < d; ++j) mu0b.at(i, j) = ub.at(i, j);

        model::bind_params(g, state.params);
        g.bind("x", xb);
        g.bind("u", ub);
        g.bind("mu0", mu0b);
        g.bind("eps", epsb);
        g.bind("x_t", xtb);
        g.bind("tfeat", time_features(ts, vcfg.time_feat));
        g.bind("target", tgtb);

        const double total = g.forward(terms.total).data[0];
        if (!std::isfinite(total))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));

        if (static_cast<std::size_t>(step) % cfg.log_interval == 0 ||
            step + 1 == cfg.steps) {
            TraceRow row;
            row.step = step;
            row.cfm = g.value(terms.cfm).data[0];
            row.kl = g.value(terms.kl).data[0];
            row.align = g.value(terms.align).data[0];
            row.intra = g.value(terms.intra).data[0];
            row.inter = g.value(terms.inter).data[0];
            row.total = total;
            trace.push_back(row);
        }

        g.backward(terms.total);
        ad::ParamMap grads = g.param_grads();
        state.opt.lr = cfg.lr;
        adam_step(state.params, grads, state.opt);
        state.step = step + 1;

        if (hook && cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0)
            hook(state, state.step);
    }
}

}  // namespace dlcfm::flow

#include "dlcfm/encoder.hpp"

#include <cmath>

#include "dlcfm/errors.hpp"

namespace dlcfm::model {

void EncoderConfig::validate() const {
    if (in_dim == 0) throw ConfigError("encoder: in_dim must be positive");
    if (d_Z < 2) throw ConfigError("encoder: d_Z must be >= 2");
    if (d < 1 || d >= d_Z)
        throw ConfigError("encoder: partition index d=" + std::to_string(d) +
                          " must satisfy 1 <= d < d_Z=" + std::to_string(d_Z));
    if (hidden.empty()) throw ConfigError("encoder: at least one hidden layer required");
}

namespace {

ad::Array gaussian_matrix(StreamRng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    ad::Array w({rows, cols});
    for (double& v : w.data) v = std_dev * rng.normal();
    return w;
}

}  // namespace

void init_encoder_params(const EncoderConfig& cfg, StreamRng rng, ad::ParamMap& params) {
    cfg.validate();
    std::size_t fan_in = cfg.in_dim;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        const std::size_t out = cfg.hidden[l];
        // Kaiming-style scale for leaky-relu layers.
        const double s = std::sqrt(2.0 / (static_cast<double>(fan_in) * (1.0 + cfg.leaky * cfg.leaky)));
        params["enc.w" + std::to_string(l)] = gaussian_matrix(rng, fan_in, out, s);
        params["enc.b" + std::to_string(l)] = ad::Array({1, out});
        fan_in = out;
    }
    const double s_out = std::sqrt(1.0 / static_cast<double>(fan_in));
    params["enc.wout"] = gaussian_matrix(rng, fan_in, 2 * cfg.d_Z, s_out);
    params["enc.bout"] = ad::Array({1, 2 * cfg.d_Z});
}

EncoderHeads build_encoder(ad::Graph& g, const EncoderConfig& cfg, ad::NodeId x) {
    cfg.validate();
    std::size_t fan_in = cfg.in_dim;
    ad::NodeId h = x;
    for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
        const std::size_t out = cfg.hidden[l];
        ad::NodeId w = g.param("enc.w" + std::to_string(l), {fan_in, out});
        ad::NodeId b = g.param("enc.b" + std::to_string(l), {1, out});
        h = g.leaky_relu(g.affine(h, w, b), cfg.leaky);
        fan_in = out;
    }
    ad::NodeId wout = g.param("enc.wout", {fan_in, 2 * cfg.d_Z});
    ad::NodeId bout = g.param("enc.bout", {1, 2 * cfg.d_Z});
    ad::NodeId heads = g.affine(h, wout, bout);
    EncoderHeads out;
    out.mu = g.slice_cols(heads, 0, cfg.d_Z);
    out.logvar = g.clamp(g.slice_cols(heads, cfg.d_Z, 2 * cfg.d_Z), -cfg.logvar_clamp, cfg.logvar_clamp);
    return out;
}

void bind_params(ad::Graph& g, const ad::ParamMap& params) {
    for (const auto& [name, value] : params)
        if (g.has_leaf(name)) g.bind(name, value);
}

void encode(const EncoderConfig& cfg, const ad::ParamMap& params, const ad::Array& x,
            ad::Array& mu, ad::Array& logvar) {
    if (x.rank() != 2 || x.cols() != cfg.in_dim)
        throw NumericError("encode: expected (n x " + std::to_string(cfg.in_dim) + ") input, got " +
                           ad::shape_str(x.shape));
    ad::Graph g;
    ad::NodeId xin = g.input("x", x.shape);
    EncoderHeads heads = build_encoder(g, cfg, xin);
    bind_params(g, params);
    g.bind("x", x);
    g.forward(std::max(heads.mu, heads.logvar));
    mu = g.value(heads.mu);
    logvar = g.value(heads.logvar);
    if (!mu.all_finite() || !logvar.all_finite())
        throw NumericError("encode: non-finite activations");
}

ad::NodeId reparameterize(ad::Graph& g, ad::NodeId mu, ad::NodeId logvar, ad::NodeId eps) {
    ad::NodeId std_dev = g.exp(g.scale(logvar, 0.5));
    return g.add(mu, g.mul(std_dev, eps));
}

ad::Array reparameterize(const ad::Array& mu, const ad::Array& logvar, StreamRng& rng) {
    if (mu.shape != logvar.shape)
        throw NumericError("reparameterize: shape mismatch: " + ad::shape_str(mu.shape) + " vs " +
                           ad::shape_str(logvar.shape));
    ad::Array z = mu;
    for (std::size_t i = 0; i < z.numel(); ++i)
        z.data[i] += std::exp(0.5 * logvar.data[i]) * rng.normal();
    return z;
}

std::pair<ad::Array, ad::Array> partition(const ad::Array& z, std::size_t d) {
    const std::size_t d_Z = z.cols();
    if (d < 1 || d >= d_Z)
        throw ConfigError("partition: d=" + std::to_string(d) + " out of range for d_Z=" +
                          std::to_string(d_Z));
    const std::size_t n = z.rows();
    ad::Array aux({n, d});
    ad::Array rec({n, d_Z - d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) aux.at(i, j) = z.at(i, j);
        for (std::size_t j = d; j < d_Z; ++j) rec.at(i, j - d) = z.at(i, j);
    }
    return {std::move(aux), std::move(rec)};
}

}  // namespace dlcfm::model

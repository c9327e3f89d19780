#include "dlcfm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dlcfm/errors.hpp"

namespace dlcfm::ode {

Method method_from_string(const std::string& s) {
    if (s == "euler") return Method::Euler;
    if (s == "midpoint") return Method::Midpoint;
    if (s == "rk4") return Method::Rk4;
    throw ConfigError("unknown solver method '" + s + "' (euler|midpoint|rk4)");
}

std::string method_to_string(Method m) {
    switch (m) {
        case Method::Euler: return "euler";
        case Method::Midpoint: return "midpoint";
        case Method::Rk4: return "rk4";
    }
    return "?";
}

void SolverSpec::validate() const {
    if (n_ode < 1) throw ConfigError("solver: n_ode must be >= 1");
}

namespace {

ad::Array axpy(const ad::Array& x, double a, const ad::Array& y) {
    ad::Array out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += a * y.data[i];
    return out;
}

void check_state(const ad::Array& x, double t) {
    if (!x.all_finite())
        throw NumericError("ode: non-finite state at t=" + std::to_string(t));
}

}  // namespace

ad::Array ode_step(const Field& f, const ad::Array& x, double t, double h, Method method) {
    switch (method) {
        case Method::Euler: {
            return axpy(x, h, f(x, t));
        }
        case Method::Midpoint: {
            const ad::Array k1 = f(x, t);
            const ad::Array mid = axpy(x, 0.5 * h, k1);
            return axpy(x, h, f(mid, t + 0.5 * h));
        }
        case Method::Rk4: {
            const ad::Array k1 = f(x, t);
            const ad::Array k2 = f(axpy(x, 0.5 * h, k1), t + 0.5 * h);
            const ad::Array k3 = f(axpy(x, 0.5 * h, k2), t + 0.5 * h);
            const ad::Array k4 = f(axpy(x, h, k3), t + h);
            ad::Array out = x;
            const double c = h / 6.0;
            for (std::size_t i = 0; i < out.numel(); ++i)
                out.data[i] += c * (k1.data[i] + 2.0 * (k2.data[i] + k3.data[i]) + k4.data[i]);
            return out;
        }
    }
    throw NumericError("ode: unknown method");
}

ad::Array integrate(const Field& f, ad::Array x0, const SolverSpec& spec) {
    spec.validate();
    const double h = spec.step_size();
    ad::Array x = std::move(x0);
    check_state(x, 0.0);
    for (int i = 0; i < spec.n_ode; ++i) {
        const double t = static_cast<double>(i) * h;
        x = ode_step(f, x, t, h, spec.method);
        check_state(x, t + h);
    }
    return x;
}

VfEvaluator::VfEvaluator(const flow::ModelState& state, std::size_t batch)
    : state_(state), vcfg_(state.cfg.vf()), batch_(batch) {
    ad::NodeId x = g_.input("x_t", {batch, vcfg_.data_dim});
    ad::NodeId z = g_.input("z", {batch, vcfg_.d_Z});
    ad::NodeId tf = g_.input("tfeat", {batch, vcfg_.time_feat});
    out_ = flow::build_vf(g_, vcfg_, x, z, tf);
    model::bind_params(g_, state.params);
}

ad::Array VfEvaluator::eval(const ad::Array& x, const ad::Array& z, double t) {
    g_.bind("x_t", x);
    g_.bind("z", z);
    g_.bind("tfeat", flow::time_features(std::vector<double>(batch_, t), vcfg_.time_feat));
    return g_.forward(out_);
}

Field VfEvaluator::field_for(ad::Array z) {
    return [this, z = std::move(z)](const ad::Array& x, double t) { return eval(x, z, t); };
}

ad::Array generate(const flow::ModelState& state, const ad::Array& z, const ad::Array& x0,
                   const SolverSpec& spec) {
    const std::size_t K = z.rows();
    VfEvaluator ev(state, K);
    ad::Array flat = integrate(ev.field_for(z), x0, spec);
    return flat.reshaped({K, state.cfg.side, state.cfg.side});
}

namespace {

// Encoder means/logvars over catalog rows [lo, hi).
void encode_range(const flow::ModelState& state, const data::Catalog& catalog, std::size_t lo,
                  std::size_t hi, ad::Array& mu, ad::Array& logvar) {
    const std::size_t p = catalog.pixel_count();
    ad::Array x({hi - lo, p});
    std::copy_n(catalog.images.data.begin() + static_cast<std::ptrdiff_t>(lo * p), (hi - lo) * p,
                x.data.begin());
    model::encode(state.cfg.encoder(), state.params, x, mu, logvar);
}

ad::Array gather_images(const data::Catalog& catalog, const std::vector<std::size_t>& idx) {
    const std::size_t p = catalog.pixel_count();
    ad::Array x({idx.size(), p});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(catalog.images.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * p), p,
                    x.data.begin() + static_cast<std::ptrdiff_t>(i * p));
    return x;
}

ad::Array draw_noise(StreamRng& rng, std::size_t rows, std::size_t cols) {
    ad::Array x({rows, cols});
    for (double& v : x.data) v = rng.normal();
    return x;
}

}  // namespace

SampleResult sample(const flow::ModelState& state, const data::Catalog& catalog, std::size_t K,
                    const SolverSpec& spec, std::uint64_t seed) {
    if (K < 1) throw ConfigError("sample: K must be >= 1");
    if (catalog.size() == 0) throw NumericError("sample: empty catalog");
    const std::size_t n = catalog.n_train();
    StreamRng rng(seed, "sample");

    std::vector<std::size_t> idx(K);
    if (K <= n) {
        // partial Fisher-Yates, without replacement
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 0; i < K; ++i) {
            const std::size_t j = i + rng.uniform_index(n - i);
            std::swap(perm[i], perm[j]);
            idx[i] = perm[i];
        }
    } else {
        for (auto& v : idx) v = rng.uniform_index(n);
    }

    ad::Array x = gather_images(catalog, idx);
    ad::Array mu, logvar;
    model::encode(state.cfg.encoder(), state.params, x, mu, logvar);
    ad::Array z = model::reparameterize(mu, logvar, rng);
    ad::Array x0 = draw_noise(rng, K, catalog.pixel_count());

    SampleResult out;
    out.images = generate(state, z, x0, spec);
    out.z = std::move(z);
    out.source_idx = std::move(idx);
    return out;
}

SampleResult sample_controlled(const flow::ModelState& state, const data::Catalog& catalog,
                               const std::vector<double>& z_aux, RecMode mode, double tail_quantile,
                               std::size_t K, const SolverSpec& spec, std::uint64_t seed) {
    const std::size_t d = state.cfg.d, dz = state.cfg.d_Z;
    if (z_aux.size() != d) throw ConfigError("sample_controlled: z_aux length must equal d");
    if (!(tail_quantile > 0.5 && tail_quantile < 1.0))
        throw ConfigError("sample_controlled: tail_quantile must be in (0.5, 1)");
    if (K < 1) throw ConfigError("sample_controlled: K must be >= 1");
    const std::size_t n = catalog.n_train();
    if (n == 0) throw NumericError("sample_controlled: empty training split");

    ad::Array mu, logvar;
    encode_range(state, catalog, 0, n, mu, logvar);

    // Standardized norm of the rec block per item.
    const std::size_t dr = dz - d;
    std::vector<double> mean(dr, 0.0), sd(dr, 0.0);
    for (std::size_t j = 0; j < dr; ++j) {
        for (std::size_t i = 0; i < n; ++i) mean[j] += mu.at(i, d + j);
        mean[j] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double c = mu.at(i, d + j) - mean[j];
            sd[j] += c * c;
        }
        sd[j] = std::sqrt(sd[j] / static_cast<double>(n)) + 1e-12;
    }
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dr; ++j) {
            const double s = (mu.at(i, d + j) - mean[j]) / sd[j];
            acc += s * s;
        }
        score[i] = std::sqrt(acc);
    }

    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[(n - 1) / 2];
    const double cutoff = sorted[static_cast<std::size_t>(
        std::floor(tail_quantile * static_cast<double>(n - 1)))];

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i) {
        if (mode == RecMode::Center ? score[i] < median : score[i] > cutoff) pool.push_back(i);
    }
    if (pool.empty()) throw NumericError("sample_controlled: empty selection pool");

    StreamRng rng(seed, "sample.controlled");
    std::vector<std::size_t> idx(K);
    for (auto& v : idx) v = pool[rng.uniform_index(pool.size())];

    ad::Array z({K, dz});
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < d; ++j) z.at(i, j) = z_aux[j];
        for (std::size_t j = 0; j < dr; ++j) z.at(i, d + j) = mu.at(idx[i], d + j);
    }
    ad::Array x0 = draw_noise(rng, K, catalog.pixel_count());

    SampleResult out;
    out.images = generate(state, z, x0, spec);
    out.z = std::move(z);
    out.source_idx = std::move(idx);
    return out;
}

ad::Array traverse(const flow::ModelState& state, std::size_t j, const std::vector<double>& grid,
                   const ad::Array& z_rec_fixed, const SolverSpec& spec, std::uint64_t seed) {
    const std::size_t d = state.cfg.d, dz = state.cfg.d_Z;
    if (j >= d) throw ConfigError("traverse: guided dimension " + std::to_string(j) +
                                  " out of range (d=" + std::to_string(d) + ")");
    if (grid.empty()) throw ConfigError("traverse: empty grid");
    if (z_rec_fixed.numel() != dz - d)
        throw ConfigError("traverse: z_rec length must be d_Z - d");

    const std::size_t G = grid.size();
    ad::Array z({G, dz});
    for (std::size_t r = 0; r < G; ++r) {
        for (std::size_t k = 0; k < d; ++k) z.at(r, k) = k == j ? grid[r] : 0.5;
        for (std::size_t k = 0; k < dz - d; ++k) z.at(r, d + k) = z_rec_fixed.data[k];
    }

    // One shared x0 row for the whole traversal.
    StreamRng rng(seed, "traverse");
    const std::size_t p = state.cfg.data_dim();
    ad::Array x0_row = draw_noise(rng, 1, p);
    ad::Array x0({G, p});
    for (std::size_t r = 0; r < G; ++r)
        std::copy_n(x0_row.data.begin(), p, x0.data.begin() + static_cast<std::ptrdiff_t>(r * p));

    return generate(state, z, x0, spec);
}

ad::Array mean_rec_latent(const flow::ModelState& state, const data::Catalog& catalog) {
    const std::size_t n = catalog.n_train();
    if (n == 0) throw NumericError("mean_rec_latent: empty training split");
    ad::Array mu, logvar;
    encode_range(state, catalog, 0, n, mu, logvar);
    const std::size_t d = state.cfg.d, dz = state.cfg.d_Z;
    ad::Array rec({1, dz - d});
    for (std::size_t j = d; j < dz; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += mu.at(i, j);
        rec.data[j - d] = acc / static_cast<double>(n);
    }
    return rec;
}

}  // namespace dlcfm::ode

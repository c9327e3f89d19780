#include "dlcfm/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dlcfm/errors.hpp"

namespace dlcfm::loss {

namespace {
// Guards shared by the array and graph routes so the two stay in lockstep:
// kVarEps keeps log(var) finite on constant columns, kStdEps keeps the
// division defined there. Standardizing twice makes the statistics
// scale-free far below the 1e-10 the calibration demands.
constexpr double kVarEps = 1e-16;
constexpr double kStdEps = 1e-8;
}  // namespace

void PriorSpec::validate() const {
    if (!(tau2 > 0.0) || tau2 > 1.0) throw ConfigError("prior: tau2 must be in (0, 1]");
    if (d < 1 || d >= d_Z) throw ConfigError("prior: need 1 <= d < d_Z");
}

void LossWeights::validate() const {
    if (beta < 0.0 || lambda1 < 0.0 || lambda2 < 0.0)
        throw ConfigError("loss weights must be non-negative");
    if (K < 1 || K > 2) throw ConfigError("loss: polynomial degree K must be 1 or 2");
}

void prior_params(const ad::Array& u, const PriorSpec& spec, ad::Array& mu0, ad::Array& sigma0_diag) {
    spec.validate();
    if (u.rank() != 2 || u.cols() != spec.d)
        throw NumericError("prior_params: expected (n x " + std::to_string(spec.d) + ") aux batch, got " +
                           ad::shape_str(u.shape));
    for (double v : u.data)
        if (!(v >= 0.0 && v <= 1.0))
            throw NumericError("prior_params: auxiliary value " + std::to_string(v) +
                               " outside [0, 1]; normalize u first");

    const std::size_t n = u.rows();
    mu0 = ad::Array({n, spec.d_Z});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < spec.d; ++j) mu0.at(i, j) = u.at(i, j);

    sigma0_diag = ad::Array({1, spec.d_Z});
    for (std::size_t j = 0; j < spec.d_Z; ++j) sigma0_diag.data[j] = j < spec.d ? spec.tau2 : 1.0;
}

ad::Array kl_gaussian_diag(const ad::Array& mu_q, const ad::Array& logvar_q, const ad::Array& mu0,
                           const ad::Array& sigma0_diag) {
    if (mu_q.shape != logvar_q.shape || mu_q.shape != mu0.shape)
        throw NumericError("kl: mu/logvar/mu0 shapes must match, got " + ad::shape_str(mu_q.shape) + ", " +
                           ad::shape_str(logvar_q.shape) + ", " + ad::shape_str(mu0.shape));
    const std::size_t n = mu_q.rows(), dz = mu_q.cols();
    if (sigma0_diag.numel() != dz) throw NumericError("kl: sigma0 length mismatch");
    for (double s : sigma0_diag.data)
        if (!(s > 0.0)) throw NumericError("kl: non-positive prior variance entry");

    ad::Array out({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dz; ++j) {
            const double s0 = sigma0_diag.data[j];
            const double lv = logvar_q.at(i, j);
            const double diff = mu_q.at(i, j) - mu0.at(i, j);
            acc += std::log(s0) - lv - 1.0 + (diff * diff + std::exp(lv)) / s0;
        }
        out.data[i] = 0.5 * acc;
    }
    return out;
}

// ---------------------------------------------------------------------
// Plain-array correlation route.
// ---------------------------------------------------------------------

namespace {

void check_corr_inputs(const ad::Array& V, const ad::Array& W, int K) {
    if (V.rank() != 2 || W.rank() != 2)
        throw NumericError("corr: expected rank-2 batches");
    if (V.rows() != W.rows())
        throw NumericError("corr: row counts differ: " + ad::shape_str(V.shape) + " vs " + ad::shape_str(W.shape));
    if (V.rows() < 3) throw NumericError("corr: batch size must be >= 3");
    if (K < 1 || K > 2) throw NumericError("corr: polynomial degree K must be 1 or 2");
}

ad::Array center_cols(const ad::Array& x) {
    const std::size_t n = x.rows(), m = x.cols();
    ad::Array out({n, m});
    for (std::size_t j = 0; j < m; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) out.at(i, j) = x.at(i, j) - mean;
    }
    return out;
}

ad::Array standardize_once(const ad::Array& x) {
    const std::size_t n = x.rows(), m = x.cols();
    ad::Array xc = center_cols(x);
    for (std::size_t j = 0; j < m; ++j) {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += xc.at(i, j) * xc.at(i, j);
        var /= static_cast<double>(n);
        const double inv = 1.0 / (std::sqrt(var + kVarEps) + kStdEps);
        for (std::size_t i = 0; i < n; ++i) xc.at(i, j) *= inv;
    }
    return xc;
}

ad::Array standardize_twice(const ad::Array& x) { return standardize_once(standardize_once(x)); }

// Centered elementwise power lifts, each standardized.
std::vector<ad::Array> lifted_blocks(const ad::Array& x, int K) {
    ad::Array xc = center_cols(x);
    std::vector<ad::Array> out;
    out.push_back(standardize_twice(xc));
    if (K >= 2) {
        ad::Array sq = xc;
        for (double& v : sq.data) v *= v;
        out.push_back(standardize_twice(sq));
    }
    return out;
}

double clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

ad::Array batch_corr_lifted(const ad::Array& V, const ad::Array& W, int K) {
    check_corr_inputs(V, W, K);
    const std::size_t n = V.rows(), mv = V.cols(), mw = W.cols();
    const auto lv = lifted_blocks(V, K);
    const auto lw = lifted_blocks(W, K);
    const std::size_t ku = static_cast<std::size_t>(K);

    ad::Array corr({ku * mv, ku * mw});
    for (std::size_t a = 0; a < ku; ++a) {
        for (std::size_t b = 0; b < ku; ++b) {
            for (std::size_t i = 0; i < mv; ++i) {
                for (std::size_t j = 0; j < mw; ++j) {
                    double acc = 0.0;
                    for (std::size_t r = 0; r < n; ++r) acc += lv[a].at(r, i) * lw[b].at(r, j);
                    corr.at(a * mv + i, b * mw + j) = clamp1(acc / static_cast<double>(n));
                }
            }
        }
    }
    return corr;
}

double r0(const ad::Array& V, const ad::Array& W, int K) {
    const ad::Array corr = batch_corr_lifted(V, W, K);
    double acc = 0.0;
    for (double v : corr.data) acc += std::abs(v);
    return acc / static_cast<double>(corr.numel());
}

double r1(const ad::Array& v, const ad::Array& w, int K) {
    check_corr_inputs(v, w, K);
    if (v.cols() != w.cols())
        throw NumericError("r1: column counts differ: " + ad::shape_str(v.shape) + " vs " + ad::shape_str(w.shape));
    const ad::Array corr = batch_corr_lifted(v, w, K);
    const std::size_t m = v.cols(), ku = static_cast<std::size_t>(K);
    double acc = 0.0;
    for (std::size_t a = 0; a < ku; ++a)
        for (std::size_t b = 0; b < ku; ++b)
            for (std::size_t i = 0; i < m; ++i)
                acc += 1.0 - std::abs(corr.at(a * m + i, b * m + i));
    return acc / static_cast<double>(ku * ku * m);
}

double align_penalty(const ad::Array& u_col, const ad::Array& mu_col, int K) {
    return r1(u_col, mu_col, K);
}

double decorr_penalty(const ad::Array& A, const ad::Array& B, int K) { return r0(A, B, K); }

DlcfmTerms dlcfm_loss(double cfm_term, const ad::Array& mu, const ad::Array& logvar,
                      const ad::Array& u, const LossWeights& w, const PriorSpec& spec) {
    w.validate();
    spec.validate();
    if (mu.rows() < 3) throw NumericError("dlcfm_loss: batch size must be >= 3");

    ad::Array mu0, sigma0;
    prior_params(u, spec, mu0, sigma0);
    const ad::Array kl_items = kl_gaussian_diag(mu, logvar, mu0, sigma0);
    double kl_mean = 0.0;
    for (double v : kl_items.data) kl_mean += v;
    kl_mean /= static_cast<double>(kl_items.numel());

    const std::size_t n = mu.rows(), d = spec.d, dz = spec.d_Z;
    auto col_of = [&](const ad::Array& a, std::size_t j) {
        ad::Array c({n, 1});
        for (std::size_t i = 0; i < n; ++i) c.data[i] = a.at(i, j);
        return c;
    };
    auto cols_of = [&](const ad::Array& a, std::size_t lo, std::size_t hi) {
        ad::Array c({n, hi - lo});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = lo; j < hi; ++j) c.at(i, j - lo) = a.at(i, j);
        return c;
    };

    DlcfmTerms t;
    t.cfm = cfm_term;
    t.kl = kl_mean;
    for (std::size_t j = 0; j < d; ++j) {
        t.align += align_penalty(col_of(u, j), col_of(mu, j), w.K);
        if (d > 1) {
            // guided block with column j removed
            ad::Array rest({n, d - 1});
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t c = 0;
                for (std::size_t k = 0; k < d; ++k)
                    if (k != j) rest.at(i, c++) = mu.at(i, k);
            }
            t.intra += decorr_penalty(col_of(u, j), rest, w.K);
        }
    }
    t.inter = decorr_penalty(u, cols_of(mu, d, dz), w.K);
    t.total = t.cfm + w.beta * t.kl + w.lambda1 * (t.align + t.intra) + w.lambda2 * t.inter;
    return t;
}

// ---------------------------------------------------------------------
// Graph route.
// ---------------------------------------------------------------------

ad::NodeId kl_node(ad::Graph& g, ad::NodeId mu, ad::NodeId logvar, ad::NodeId mu0,
                   const ad::Array& sigma0_diag) {
    for (double s : sigma0_diag.data)
        if (!(s > 0.0)) throw NumericError("kl: non-positive prior variance entry");
    const ad::Shape& s = g.shape(mu);
    const std::size_t n = s[0], dz = s[1];
    if (sigma0_diag.numel() != dz) throw NumericError("kl: sigma0 length mismatch");

    ad::Array inv_s0({1, dz});
    ad::Array log_s0_m1({1, dz});
    for (std::size_t j = 0; j < dz; ++j) {
        inv_s0.data[j] = 1.0 / sigma0_diag.data[j];
        log_s0_m1.data[j] = std::log(sigma0_diag.data[j]) - 1.0;
    }
    ad::NodeId inv = g.broadcast(g.constant(inv_s0), s);
    ad::NodeId base = g.broadcast(g.constant(log_s0_m1), s);

    ad::NodeId quad = g.mul(g.square(g.sub(mu, mu0)), inv);
    ad::NodeId trace = g.mul(g.exp(logvar), inv);
    ad::NodeId per = g.add(g.add(quad, trace), g.add(g.neg(logvar), base));
    // 0.5 * (batch mean of per-item sums)
    return g.scale(g.sum(per), 0.5 / static_cast<double>(n));
}

namespace {

ad::NodeId center_node(ad::Graph& g, ad::NodeId x) {
    return g.sub(x, g.broadcast(g.col_mean(x), g.shape(x)));
}

ad::NodeId standardize_once_node(ad::Graph& g, ad::NodeId x) {
    ad::NodeId xc = center_node(g, x);
    ad::NodeId var = g.col_mean(g.square(xc));
    ad::NodeId s = g.sqrt_pos(g.add_const(var, kVarEps));
    ad::NodeId inv = g.recip_pos(g.add_const(s, kStdEps));
    return g.mul(xc, g.broadcast(inv, g.shape(xc)));
}

ad::NodeId standardize_twice_node(ad::Graph& g, ad::NodeId x) {
    return standardize_once_node(g, standardize_once_node(g, x));
}

ad::NodeId clamp1_node(ad::Graph& g, ad::NodeId x) { return g.clamp(x, -1.0, 1.0); }

}  // namespace

std::vector<ad::NodeId> lifted_standardized(ad::Graph& g, ad::NodeId x, int K) {
    if (K < 1 || K > 2) throw NumericError("corr: polynomial degree K must be 1 or 2");
    if (g.shape(x)[0] < 3) throw NumericError("corr: batch size must be >= 3");
    ad::NodeId xc = center_node(g, x);
    std::vector<ad::NodeId> out;
    out.push_back(standardize_twice_node(g, xc));
    if (K >= 2) out.push_back(standardize_twice_node(g, g.square(xc)));
    return out;
}

ad::NodeId r0_node(ad::Graph& g, ad::NodeId V, ad::NodeId W, int K) {
    const double n = static_cast<double>(g.shape(V)[0]);
    const auto lv = lifted_standardized(g, V, K);
    const auto lw = lifted_standardized(g, W, K);
    ad::NodeId acc = -1;
    for (const auto& a : lv) {
        for (const auto& b : lw) {
            ad::NodeId corr = clamp1_node(g, g.scale(g.matmul(a, b, /*ta=*/true), 1.0 / n));
            ad::NodeId m = g.mean(g.abs_val(corr));
            acc = acc < 0 ? m : g.add(acc, m);
        }
    }
    return g.scale(acc, 1.0 / static_cast<double>(K * K));
}

ad::NodeId r1_node(ad::Graph& g, ad::NodeId v, ad::NodeId w, int K) {
    if (g.shape(v)[1] != g.shape(w)[1])
        throw NumericError("r1: column counts differ: " + ad::shape_str(g.shape(v)) + " vs " +
                           ad::shape_str(g.shape(w)));
    const auto lv = lifted_standardized(g, v, K);
    const auto lw = lifted_standardized(g, w, K);
    ad::NodeId acc = -1;
    for (const auto& a : lv) {
        for (const auto& b : lw) {
            // Diagonal entries only: per-column mean of the elementwise
            // product of the standardized blocks.
            ad::NodeId diag = clamp1_node(g, g.col_mean(g.mul(a, b)));
            ad::NodeId m = g.mean(g.add_const(g.neg(g.abs_val(diag)), 1.0));
            acc = acc < 0 ? m : g.add(acc, m);
        }
    }
    return g.scale(acc, 1.0 / static_cast<double>(K * K));
}

DlcfmLossNodes dlcfm_loss_node(ad::Graph& g, ad::NodeId cfm, ad::NodeId mu, ad::NodeId logvar,
                               ad::NodeId u, ad::NodeId mu0, const LossWeights& w,
                               const PriorSpec& spec) {
    w.validate();
    spec.validate();
    const std::size_t d = spec.d, dz = spec.d_Z;
    if (g.shape(mu)[0] < 3) throw NumericError("dlcfm_loss: batch size must be >= 3");

    ad::Array sigma0({1, dz});
    for (std::size_t j = 0; j < dz; ++j) sigma0.data[j] = j < d ? spec.tau2 : 1.0;

    DlcfmLossNodes out;
    out.cfm = cfm;
    out.kl = kl_node(g, mu, logvar, mu0, sigma0);

    ad::NodeId align = -1, intra = -1;
    for (std::size_t j = 0; j < d; ++j) {
        ad::NodeId uj = g.slice_cols(u, j, j + 1);
        ad::NodeId mj = g.slice_cols(mu, j, j + 1);
        ad::NodeId a = r1_node(g, uj, mj, w.K);
        align = align < 0 ? a : g.add(align, a);
        if (d > 1) {
            ad::NodeId rest = -1;
            if (j == 0) {
                rest = g.slice_cols(mu, 1, d);
            } else if (j == d - 1) {
                rest = g.slice_cols(mu, 0, d - 1);
            } else {
                rest = g.concat_cols(g.slice_cols(mu, 0, j), g.slice_cols(mu, j + 1, d));
            }
            ad::NodeId dec = r0_node(g, uj, rest, w.K);
            intra = intra < 0 ? dec : g.add(intra, dec);
        }
    }
    out.align = align;
    out.intra = intra < 0 ? g.constant(0.0) : intra;
    out.inter = r0_node(g, u, g.slice_cols(mu, d, dz), w.K);

    ad::NodeId reg = g.add(g.scale(g.add(out.align, out.intra), w.lambda1),
                           g.scale(out.inter, w.lambda2));
    out.total = g.add(g.add(cfm, g.scale(out.kl, w.beta)), reg);
    return out;
}

}  // namespace dlcfm::loss

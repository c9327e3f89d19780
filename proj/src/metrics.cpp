#include "dlcfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dlcfm/encoder.hpp"
#include "dlcfm/errors.hpp"

namespace dlcfm::metrics {

namespace {

void check_cloud(const ad::Array& X, const char* who, std::size_t min_n = 2) {
    if (X.rank() != 2) throw NumericError(std::string(who) + ": expected (n x p) cloud");
    if (X.rows() < min_n)
        throw NumericError(std::string(who) + ": need at least " + std::to_string(min_n) + " points");
    if (!X.all_finite()) throw NumericError(std::string(who) + ": non-finite cloud");
}

double dist_l2(const ad::Array& X, std::size_t i, const ad::Array& Y, std::size_t j) {
    const std::size_t p = X.cols();
    const double* a = X.data.data() + i * p;
    const double* b = Y.data.data() + j * p;
    double acc = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double dist_l1(const ad::Array& X, std::size_t i, const ad::Array& Y, std::size_t j) {
    const std::size_t p = X.cols();
    const double* a = X.data.data() + i * p;
    const double* b = Y.data.data() + j * p;
    double acc = 0.0;
    for (std::size_t k = 0; k < p; ++k) acc += std::abs(a[k] - b[k]);
    return acc;
}

// Mean over all ordered pairs (V-statistic, self-pairs included for the
// within terms). Terms are collected and pairwise-summed so the result
// is reduction-order independent.
double mean_cross_distance(const ad::Array& X, const ad::Array& Y,
                           double (*dist)(const ad::Array&, std::size_t, const ad::Array&, std::size_t)) {
    const std::size_t nx = X.rows(), ny = Y.rows();
    std::vector<double> terms;
    terms.reserve(nx * ny);
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) terms.push_back(dist(X, i, Y, j));
    return ad::pairwise_sum(terms) / static_cast<double>(nx * ny);
}

}  // namespace

double energy_distance(const ad::Array& X, const ad::Array& Y) {
    check_cloud(X, "energy_distance", 1);
    check_cloud(Y, "energy_distance", 1);
    if (X.cols() != Y.cols()) throw NumericError("energy_distance: dimension mismatch");
    const double cross = mean_cross_distance(X, Y, dist_l2);
    const double within_x = mean_cross_distance(X, X, dist_l2);
    const double within_y = mean_cross_distance(Y, Y, dist_l2);
    return 2.0 * cross - within_x - within_y;
}

namespace {

double median_pooled_distance(const ad::Array& X, const ad::Array& Y,
                              double (*dist)(const ad::Array&, std::size_t, const ad::Array&,
                                             std::size_t)) {
    const std::size_t nx = X.rows(), ny = Y.rows(), n = nx + ny;
    auto point = [&](std::size_t i) -> std::pair<const ad::Array*, std::size_t> {
        return i < nx ? std::pair{&X, i} : std::pair{&Y, i - nx};
    };
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            auto [ai, ii] = point(i);
            auto [bj, jj] = point(j);
            dists.push_back(dist(*ai, ii, *bj, jj));
        }
    }
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    return dists[dists.size() / 2];
}

}  // namespace

double mmd(const ad::Array& X, const ad::Array& Y, Kernel kernel, double bandwidth) {
    check_cloud(X, "mmd", 1);
    check_cloud(Y, "mmd", 1);
    if (X.cols() != Y.cols()) throw NumericError("mmd: dimension mismatch");

    auto dist = kernel == Kernel::Gaussian ? dist_l2 : dist_l1;
    double s = bandwidth;
    if (!(s > 0.0)) {
        s = median_pooled_distance(X, Y, dist);
        if (!(s > 0.0))
            throw NumericError("mmd: median pairwise distance is zero (all pooled points identical)");
    }

    auto kval = [&](double d2) {
        return kernel == Kernel::Gaussian ? std::exp(-d2 * d2 / (2.0 * s * s)) : std::exp(-d2 / s);
    };
    auto mean_kernel = [&](const ad::Array& A, const ad::Array& B) {
        const std::size_t na = A.rows(), nb = B.rows();
        std::vector<double> terms;
        terms.reserve(na * nb);
        for (std::size_t i = 0; i < na; ++i)
            for (std::size_t j = 0; j < nb; ++j) terms.push_back(kval(dist(A, i, B, j)));
        return ad::pairwise_sum(terms) / static_cast<double>(na * nb);
    };
    return mean_kernel(X, X) + mean_kernel(Y, Y) - 2.0 * mean_kernel(X, Y);
}

SinkhornResult sinkhorn_distance(const ad::Array& X, const ad::Array& Y, double reg, int max_iters,
                                 double tolerance) {
    check_cloud(X, "sinkhorn", 1);
    check_cloud(Y, "sinkhorn", 1);
    if (X.cols() != Y.cols()) throw NumericError("sinkhorn: dimension mismatch");
    if (!(reg > 0.0)) throw NumericError("sinkhorn: reg must be positive");

    const std::size_t nx = X.rows(), ny = Y.rows();
    const double la = -std::log(static_cast<double>(nx));  // log uniform weights
    const double lb = -std::log(static_cast<double>(ny));

    ad::Array C({nx, ny});
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) {
            const double d = dist_l2(X, i, Y, j);
            C.at(i, j) = d * d;
        }

    std::vector<double> f(nx, 0.0), g(ny, 0.0);
    auto lse_row = [&](std::size_t i) {
        double m = -1e308;
        for (std::size_t j = 0; j < ny; ++j) m = std::max(m, (g[j] - C.at(i, j)) / reg);
        double acc = 0.0;
        for (std::size_t j = 0; j < ny; ++j) acc += std::exp((g[j] - C.at(i, j)) / reg - m);
        return m + std::log(acc);
    };
    auto lse_col = [&](std::size_t j) {
        double m = -1e308;
        for (std::size_t i = 0; i < nx; ++i) m = std::max(m, (f[i] - C.at(i, j)) / reg);
        double acc = 0.0;
        for (std::size_t i = 0; i < nx; ++i) acc += std::exp((f[i] - C.at(i, j)) / reg - m);
        return m + std::log(acc);
    };

    // Plan entries are P_ij = exp((f_i + g_j - C_ij) / reg); a fresh f
    // update makes every row sum exactly 1/nx, so only the column marginal
    // needs monitoring after the g update (and vice versa).
    auto violation = [&]() {
        double v = 0.0;
        for (std::size_t i = 0; i < nx; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < ny; ++j) row += std::exp((f[i] + g[j] - C.at(i, j)) / reg);
            v += std::abs(row - std::exp(la));
        }
        for (std::size_t j = 0; j < ny; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < nx; ++i) col += std::exp((f[i] + g[j] - C.at(i, j)) / reg);
            v += std::abs(col - std::exp(lb));
        }
        return v;
    };

    SinkhornResult res;
    double viol = 1e300;
    for (int it = 0; it < max_iters; ++it) {
        for (std::size_t i = 0; i < nx; ++i) f[i] = reg * (la - lse_row(i));
        for (std::size_t j = 0; j < ny; ++j) g[j] = reg * (lb - lse_col(j));
        res.iterations = it + 1;
        if (it % 5 == 4 || it + 1 == max_iters) {
            viol = violation();
            if (viol <= tolerance) break;
        }
    }
    if (viol > tolerance)
        throw NumericError("sinkhorn: no convergence in " + std::to_string(max_iters) +
                           " iterations, marginal violation " + std::to_string(viol));
    res.marginal_violation = viol;

    std::vector<double> terms;
    terms.reserve(nx * ny);
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j)
            terms.push_back(std::exp((f[i] + g[j] - C.at(i, j)) / reg) * C.at(i, j));
    res.cost = ad::pairwise_sum(terms);
    return res;
}

double exact_ot_assignment_cost(const ad::Array& X, const ad::Array& Y) {
    check_cloud(X, "exact_ot", 1);
    check_cloud(Y, "exact_ot", 1);
    if (X.rows() != Y.rows()) throw NumericError("exact_ot: clouds must have equal size");
    const std::size_t n = X.rows();
    if (n > 8) throw NumericError("exact_ot: n! enumeration limited to n <= 8");

    ad::Array C({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double d = dist_l2(X, i, Y, j);
            C.at(i, j) = d * d;
        }

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e308;
    do {
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) cost += C.at(i, perm[i]);
        best = std::min(best, cost);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(n);  // uniform weights 1/n
}

double energy_permutation_quantile(const ad::Array& X, const ad::Array& Y, int n_perms, double q,
                                   StreamRng& rng) {
    const std::size_t nx = X.rows(), ny = Y.rows(), n = nx + ny, p = X.cols();
    ad::Array pooled({n, p});
    std::copy(X.data.begin(), X.data.end(), pooled.data.begin());
    std::copy(Y.data.begin(), Y.data.end(), pooled.data.begin() + static_cast<std::ptrdiff_t>(nx * p));

    std::vector<double> stats(n_perms);
    std::vector<std::size_t> perm(n);
    for (int r = 0; r < n_perms; ++r) {
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
        ad::Array A({nx, p}), B({ny, p});
        for (std::size_t i = 0; i < nx; ++i)
            std::copy_n(pooled.data.begin() + static_cast<std::ptrdiff_t>(perm[i] * p), p,
                        A.data.begin() + static_cast<std::ptrdiff_t>(i * p));
        for (std::size_t i = 0; i < ny; ++i)
            std::copy_n(pooled.data.begin() + static_cast<std::ptrdiff_t>(perm[nx + i] * p), p,
                        B.data.begin() + static_cast<std::ptrdiff_t>(i * p));
        stats[r] = energy_distance(A, B);
    }
    std::sort(stats.begin(), stats.end());
    const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(n_perms - 1)));
    return stats[k];
}

MetricReport metric_suite(const ad::Array& X, const ad::Array& Y, int repeats, std::size_t subsample,
                          double reg_factor, StreamRng& rng) {
    if (repeats < 1) throw NumericError("metric_suite: repeats must be >= 1");
    check_cloud(X, "metric_suite");
    check_cloud(Y, "metric_suite");

    auto subsample_rows = [&](const ad::Array& A, StreamRng& r) {
        const std::size_t n = A.rows(), p = A.cols();
        const std::size_t k = std::min(subsample, n);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + r.uniform_index(n - i);
            std::swap(perm[i], perm[j]);
        }
        ad::Array out({k, p});
        for (std::size_t i = 0; i < k; ++i)
            std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(perm[i] * p), p,
                        out.data.begin() + static_cast<std::ptrdiff_t>(i * p));
        return out;
    };

    MetricReport report;
    report.repeats = repeats;
    report.names = {"sinkhorn", "energy", "mmd_gaussian", "mmd_laplacian"};
    std::vector<std::vector<double>> vals(4);

    for (int r = 0; r < repeats; ++r) {
        StreamRng sub = rng.fork(static_cast<std::uint64_t>(r));
        const ad::Array xs = subsample_rows(X, sub);
        const ad::Array ys = subsample_rows(Y, sub);

        // Median squared-Euclidean cost sets the Sinkhorn scale.
        double med = median_pooled_distance(xs, ys, dist_l2);
        med = med * med;
        const double reg = std::max(reg_factor * med, 1e-12);
        vals[0].push_back(sinkhorn_distance(xs, ys, reg, 20000, 1e-6).cost);
        vals[1].push_back(energy_distance(xs, ys));
        vals[2].push_back(mmd(xs, ys, Kernel::Gaussian));
        vals[3].push_back(mmd(xs, ys, Kernel::Laplacian));
    }

    for (std::size_t m = 0; m < 4; ++m) {
        double mean = 0.0;
        for (double v : vals[m]) mean += v;
        mean /= static_cast<double>(repeats);
        double sd = 0.0;
        if (repeats > 1) {
            for (double v : vals[m]) sd += (v - mean) * (v - mean);
            sd = std::sqrt(sd / static_cast<double>(repeats - 1));
        }
        report.mean.push_back(mean);
        report.sd.push_back(sd);
    }
    return report;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw NumericError("pearson: need matched n >= 2");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = x[i] - mx, b = y[i] - my;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;  // zero-variance rule
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<double> ranks_avg(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(ranks_avg(x), ranks_avg(y));
}

LatentAuxReport latent_aux_report(const flow::ModelState& state, const data::Catalog& catalog,
                                  std::size_t n_dims, bool holdout_only) {
    const std::size_t dz = state.cfg.d_Z;
    n_dims = std::min(n_dims, dz);
    const std::size_t total = catalog.size();
    const std::size_t lo = holdout_only && catalog.n_holdout > 0 ? catalog.n_train() : 0;
    const std::size_t n = total - lo;
    const std::size_t p = catalog.pixel_count();

    ad::Array x({n, p});
    std::copy_n(catalog.images.data.begin() + static_cast<std::ptrdiff_t>(lo * p), n * p,
                x.data.begin());
    ad::Array mu, logvar;
    model::encode(state.cfg.encoder(), state.params, x, mu, logvar);

    LatentAuxReport rep;
    rep.n_dims = n_dims;
    rep.table = ad::Array({n, 2 + n_dims});
    for (std::size_t i = 0; i < n; ++i) {
        rep.table.at(i, 0) = catalog.aux.at(lo + i, 0);
        rep.table.at(i, 1) = catalog.aux.at(lo + i, 1);
        for (std::size_t j = 0; j < n_dims; ++j) rep.table.at(i, 2 + j) = mu.at(i, j);
    }

    rep.corr = ad::Array({2, dz});
    for (std::size_t a = 0; a < 2; ++a) {
        std::vector<double> ua(n);
        for (std::size_t i = 0; i < n; ++i) ua[i] = catalog.aux.at(lo + i, a);
        for (std::size_t j = 0; j < dz; ++j) {
            std::vector<double> mj(n);
            for (std::size_t i = 0; i < n; ++i) mj[i] = mu.at(i, j);
            rep.corr.at(a, j) = std::abs(pearson(ua, mj));
        }
    }
    return rep;
}

double mass_conc_relation(const ad::Array& guided) {
    if (guided.rank() != 2 || guided.cols() < 2 || guided.rows() < 10)
        throw NumericError("mass_conc_relation: need (n >= 10) x (>= 2) array");
    const std::size_t n = guided.rows();
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = guided.at(i, 0);
        b[i] = guided.at(i, 1);
    }
    return pearson(a, b);
}

}  // namespace dlcfm::metrics

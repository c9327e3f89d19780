#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dlcfm/errors.hpp"
#include "dlcfm/metrics.hpp"

using namespace dlcfm;
using ad::Array;

namespace {

Array gaussian_cloud(StreamRng& rng, std::size_t n, std::size_t p, double shift = 0.0) {
    Array x({n, p});
    for (double& v : x.data) v = rng.normal() + shift;
    return x;
}

}  // namespace

TEST_CASE("energy: identical clouds give zero") {
    StreamRng rng(70, "e");
    Array x = gaussian_cloud(rng, 20, 3);
    CHECK(std::abs(metrics::energy_distance(x, x)) <= 1e-12);
}

TEST_CASE("energy: hand-evaluated singletons") {
    Array x({1, 1}, {0.0});
    Array y({1, 1}, {2.0});
    // 2 E|x-y| - E|x-x'| - E|y-y'| = 2*2 - 0 - 0 = 4
    CHECK(metrics::energy_distance(x, y) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("energy: same-distribution draws sit below the permutation 95th percentile") {
    StreamRng rng(71, "e");
    Array x = gaussian_cloud(rng, 500, 1);
    Array y = gaussian_cloud(rng, 500, 1);
    const double stat = metrics::energy_distance(x, y);
    StreamRng prng(72, "perm");
    const double q95 = metrics::energy_permutation_quantile(x, y, 100, 0.95, prng);
    CHECK(stat < q95);
}

TEST_CASE("energy and mmd are symmetric and permutation-invariant") {
    StreamRng rng(73, "sym");
    Array x = gaussian_cloud(rng, 15, 4);
    Array y = gaussian_cloud(rng, 12, 4, 0.5);
    CHECK(metrics::energy_distance(x, y) ==
          doctest::Approx(metrics::energy_distance(y, x)).epsilon(1e-12));
    CHECK(metrics::mmd(x, y, metrics::Kernel::Gaussian) ==
          doctest::Approx(metrics::mmd(y, x, metrics::Kernel::Gaussian)).epsilon(1e-12));

    // shuffle rows of x
    Array xs = x;
    std::vector<std::size_t> perm(x.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 7 + 3) % perm.size();
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) xs.at(i, j) = x.at(perm[i], j);
    CHECK(metrics::energy_distance(xs, y) ==
          doctest::Approx(metrics::energy_distance(x, y)).epsilon(1e-12));
    CHECK(metrics::mmd(xs, y, metrics::Kernel::Laplacian) ==
          doctest::Approx(metrics::mmd(x, y, metrics::Kernel::Laplacian)).epsilon(1e-12));
}

TEST_CASE("mmd: identical clouds give zero") {
    StreamRng rng(74, "m");
    Array x = gaussian_cloud(rng, 25, 2);
    CHECK(std::abs(metrics::mmd(x, x, metrics::Kernel::Gaussian)) <= 1e-12);
    CHECK(std::abs(metrics::mmd(x, x, metrics::Kernel::Laplacian)) <= 1e-12);
}

TEST_CASE("mmd: two singletons with unit gaussian bandwidth") {
    Array x({1, 2}, {0.0, 0.0});
    Array y({1, 2}, {1.0, 2.0});
    const double d2 = 5.0;  // |x-y|^2
    // expand the 1-point estimator: k(x,x) + k(y,y) - 2 k(x,y)
    const double expect = 2.0 - 2.0 * std::exp(-d2 / 2.0);
    CHECK(metrics::mmd(x, y, metrics::Kernel::Gaussian, 1.0) ==
          doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("mmd: a 3-sigma shift is detected on every seed") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        StreamRng rng(seed, "shift");
        Array a = gaussian_cloud(rng, 50, 2);
        Array b = gaussian_cloud(rng, 50, 2);
        Array c = gaussian_cloud(rng, 50, 2, 3.0);
        const double same = metrics::mmd(a, b, metrics::Kernel::Gaussian);
        const double shifted = metrics::mmd(a, c, metrics::Kernel::Gaussian);
        CHECK(shifted > same);
    }
}

TEST_CASE("mmd: all-identical pooled points make the median heuristic undefined") {
    Array x = Array::full({3, 2}, 1.0);
    Array y = Array::full({4, 2}, 1.0);
    CHECK_THROWS_WITH_AS(metrics::mmd(x, y, metrics::Kernel::Gaussian), doctest::Contains("median"),
                         NumericError);
}

TEST_CASE("sinkhorn: identical clouds at small reg have near-zero cost") {
    StreamRng rng(75, "s");
    Array x = gaussian_cloud(rng, 5, 2);
    auto res = metrics::sinkhorn_distance(x, x, 1e-3, 100000, 1e-4);
    CHECK(res.cost <= 1e-3);
    CHECK(res.marginal_violation <= 1e-4);
}

TEST_CASE("sinkhorn: two-point line example") {
    Array x({2, 1}, {0.0, 1.0});
    Array y({2, 1}, {0.0, 1.0});
    auto res = metrics::sinkhorn_distance(x, y, 1e-3, 100000, 1e-4);
    CHECK(res.cost <= 1e-3);  // exact OT cost is 0
}

TEST_CASE("sinkhorn: matches the brute-force assignment optimum within 2%") {
    StreamRng rng(76, "s");
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 4 + static_cast<std::size_t>(trial % 3);
        Array x = gaussian_cloud(rng, n, 2);
        Array y = gaussian_cloud(rng, n, 2, 0.5);
        const double exact = metrics::exact_ot_assignment_cost(x, y);
        std::vector<double> costs;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < 2; ++k) {
                    const double d = x.at(i, k) - y.at(j, k);
                    d2 += d * d;
                }
                costs.push_back(d2);
            }
        std::nth_element(costs.begin(), costs.begin() + static_cast<std::ptrdiff_t>(costs.size() / 2),
                         costs.end());
        const double med = costs[costs.size() / 2];
        const double got = metrics::sinkhorn_distance(x, y, 1e-3 * med, 100000, 1e-4).cost;
        CHECK(std::abs(got - exact) <= 0.02 * exact);
    }
}

TEST_CASE("sinkhorn: non-convergence error carries the violation") {
    StreamRng rng(77, "s");
    Array x = gaussian_cloud(rng, 4, 2);
    Array y = gaussian_cloud(rng, 4, 2, 2.0);
    CHECK_THROWS_WITH_AS(metrics::sinkhorn_distance(x, y, 1e-6, 1, 1e-12),
                         doctest::Contains("violation"), NumericError);
}

TEST_CASE("metric_suite: repeats = 1 gives zero sd; identical clouds near zero") {
    StreamRng rng(78, "suite");
    Array x = gaussian_cloud(rng, 40, 3);
    StreamRng srng(79, "suite.rng");
    // subsample >= n so both sides use the full cloud
    auto rep = metrics::metric_suite(x, x, 1, 64, 0.1, srng);
    REQUIRE(rep.names.size() == 4);
    for (double sd : rep.sd) CHECK(sd == 0.0);
    CHECK(std::abs(rep.mean[1]) <= 1e-9);   // energy
    CHECK(std::abs(rep.mean[2]) <= 1e-9);   // mmd gaussian
    CHECK(std::abs(rep.mean[3]) <= 1e-9);   // mmd laplacian
    CHECK(rep.mean[0] >= 0.0);              // sinkhorn keeps its reg-induced offset
}

TEST_CASE("metric_suite: deterministic given the rng stream") {
    StreamRng rng(80, "suite");
    Array x = gaussian_cloud(rng, 60, 3);
    Array y = gaussian_cloud(rng, 50, 3, 0.3);
    StreamRng r1(81, "s");
    StreamRng r2(81, "s");
    auto a = metrics::metric_suite(x, y, 3, 20, 0.1, r1);
    auto b = metrics::metric_suite(x, y, 3, 20, 0.1, r2);
    CHECK(a.mean == b.mean);
    CHECK(a.sd == b.sd);
}

TEST_CASE("pearson: zero variance maps to zero") {
    std::vector<double> c(10, 3.0), v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CHECK(metrics::pearson(c, v) == 0.0);
    CHECK(metrics::pearson(v, v) == doctest::Approx(1.0));
}

TEST_CASE("spearman: monotone maps to +-1, ties averaged") {
    std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> y{10, 100, 1000, 10000, 100000};
    CHECK(metrics::spearman(x, y) == doctest::Approx(1.0));
    std::vector<double> yn{5, 4, 3, 2, 1};
    CHECK(metrics::spearman(x, yn) == doctest::Approx(-1.0));
    std::vector<double> ties{1, 1, 2, 2, 3};
    CHECK(std::isfinite(metrics::spearman(x, ties)));
}

TEST_CASE("latent_aux_report: well-formed on an untrained model; constant dim row is zero") {
    data::DataConfig dc;
    dc.n = 30;
    dc.side = 8;
    dc.seed = 82;
    dc.holdout_fraction = 0.2;
    data::Catalog cat = data::build_catalog(dc);

    flow::ModelConfig m;
    m.side = 8;
    m.d = 2;
    m.d_Z = 4;
    m.enc_hidden = {8};
    m.vf_width = 8;
    m.vf_blocks = 1;
    m.emb_dim = 4;
    m.time_feat = 4;
    flow::ModelState st = flow::init_model(m, 83);

    auto rep = metrics::latent_aux_report(st, cat, 5, true);
    CHECK(rep.n_dims == 4);  // capped at d_Z
    CHECK(rep.table.shape[0] == cat.n_holdout);
    for (double v : rep.corr.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // zero encoder -> constant latents -> zero correlation rows
    for (auto& [k, a] : st.params)
        if (k.rfind("enc.", 0) == 0) std::fill(a.data.begin(), a.data.end(), 0.0);
    auto rep0 = metrics::latent_aux_report(st, cat, 4, false);
    for (double v : rep0.corr.data) CHECK(v == 0.0);
}

TEST_CASE("mass_conc_relation: coupled catalog is negative, decoupled is near zero") {
    data::DataConfig dc;
    dc.n = 4000;
    dc.side = 8;
    dc.seed = 84;
    data::Catalog cat = data::build_catalog(dc);
    CHECK(metrics::mass_conc_relation(cat.aux) < -0.2);

    dc.conc_alpha = 0.0;
    dc.seed = 85;
    data::Catalog flat = data::build_catalog(dc);
    CHECK(std::abs(metrics::mass_conc_relation(flat.aux)) <= 3.0 / std::sqrt(4000.0));
}

TEST_CASE("pairwise_sum is reduction-order fixed") {
    StreamRng rng(86, "ps");
    std::vector<double> v(1000);
    for (double& x : v) x = rng.normal();
    const double a = ad::pairwise_sum(v);
    const double b = ad::pairwise_sum(v);
    CHECK(a == b);
    // block layout identical to a row-block split
    const double left = ad::pairwise_sum(std::span<const double>(v).subspan(0, 500));
    const double right = ad::pairwise_sum(std::span<const double>(v).subspan(500));
    CHECK(a == left + right);
}

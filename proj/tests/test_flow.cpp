#include <doctest.h>

#include <cmath>

#include "dlcfm/errors.hpp"
#include "dlcfm/flow.hpp"

using namespace dlcfm;
using ad::Array;

namespace {

flow::ModelConfig tiny_model() {
    flow::ModelConfig m;
    m.side = 8;
    m.d = 2;
    m.d_Z = 4;
    m.enc_hidden = {16};
    m.vf_width = 24;
    m.vf_blocks = 1;
    m.emb_dim = 8;
    m.time_feat = 8;
    return m;
}

data::DataConfig tiny_data(std::size_t n, std::uint64_t seed = 5) {
    data::DataConfig c;
    c.n = n;
    c.side = 8;
    c.seed = seed;
    c.holdout_fraction = 0.0;
    return c;
}

flow::TrainConfig tiny_train(std::int64_t steps, std::uint64_t seed = 5) {
    flow::TrainConfig t;
    t.steps = steps;
    t.batch = 8;
    t.lr = 1e-3;
    t.seed = seed;
    t.log_interval = 1;
    return t;
}

}  // namespace

TEST_CASE("target_field: subtraction semantics") {
    Array x0({1, 2}, {0.0, 0.0});
    Array x1({1, 2}, {3.0, -2.0});
    CHECK(flow::target_field(x0, x1).data == std::vector<double>{3.0, -2.0});

    Array same({1, 3}, {1.0, 2.0, 3.0});
    for (double v : flow::target_field(same, same).data) CHECK(v == 0.0);

    Array a({1, 2}, {1.0, 2.0});
    Array b({1, 2}, {4.0, 6.0});
    CHECK(flow::target_field(a, b).data == std::vector<double>{3.0, 4.0});

    Array bad({1, 3});
    CHECK_THROWS_AS(flow::target_field(a, bad), NumericError);
}

TEST_CASE("sample_path: midpoint and endpoints at sigma = 0") {
    StreamRng rng(1, "path");
    Array x0({1, 2}, {0.0, 0.0});
    Array x1({1, 2}, {2.0, 4.0});
    Array mid = flow::sample_path(x0, x1, 0.5, 0.0, rng);
    CHECK(mid.data == std::vector<double>{1.0, 2.0});
    CHECK(flow::sample_path(x0, x1, 1.0, 0.0, rng).data == x1.data);
    CHECK(flow::sample_path(x0, x1, 0.0, 0.0, rng).data == x0.data);
    CHECK_THROWS_AS(flow::sample_path(x0, x1, 1.5, 0.0, rng), NumericError);
    CHECK_THROWS_AS(flow::sample_path(x0, x1, -0.1, 0.0, rng), NumericError);
}

TEST_CASE("sample_path: noise std matches sigma over many draws") {
    StreamRng rng(2, "path");
    Array x0({1, 1}, {0.3});
    Array x1({1, 1}, {0.9});
    const double sigma = 0.1, t = 0.4;
    const double center = t * 0.9 + (1 - t) * 0.3;
    const std::size_t n = 100000;
    double acc = 0.0, acc2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = flow::sample_path(x0, x1, t, sigma, rng).data[0];
        acc += v - center;
        acc2 += (v - center) * (v - center);
    }
    const double std_hat = std::sqrt(acc2 / n - (acc / n) * (acc / n));
    CHECK(std::abs(std_hat - sigma) <= 0.03 * sigma);
}

TEST_CASE("path derivative consistency: finite difference of the interpolant is the target") {
    StreamRng rng(3, "path");
    Array x0({2, 3}), x1({2, 3});
    for (double& v : x0.data) v = rng.normal();
    for (double& v : x1.data) v = rng.normal();
    const double h = 1e-6;
    Array up = flow::sample_path(x0, x1, 0.5 + h, 0.0, rng);
    Array dn = flow::sample_path(x0, x1, 0.5 - h, 0.0, rng);
    Array tgt = flow::target_field(x0, x1);
    for (std::size_t i = 0; i < tgt.numel(); ++i)
        CHECK((up.data[i] - dn.data[i]) / (2 * h) == doctest::Approx(tgt.data[i]).epsilon(1e-6));
}

TEST_CASE("vf_forward: zero-initialized output layer gives a zero field") {
    flow::ModelConfig m = tiny_model();
    flow::ModelState st = flow::init_model(m, 4);
    StreamRng rng(5, "x");
    Array x({3, m.data_dim()}), z({3, m.d_Z});
    for (double& v : x.data) v = rng.normal();
    for (double& v : z.data) v = rng.normal();
    Array v = flow::vf_forward(st, x, z, 0.3);
    for (double val : v.data) CHECK(val == 0.0);
}

TEST_CASE("vf_forward: identical rows map to identical outputs") {
    flow::ModelConfig m = tiny_model();
    flow::ModelState st = flow::init_model(m, 6);
    // make the output nontrivial
    StreamRng prng(7, "pert");
    for (auto& [k, a] : st.params)
        for (double& vv : a.data) vv += 0.05 * prng.normal();

    StreamRng rng(8, "x");
    Array x({2, m.data_dim()}), z({2, m.d_Z});
    for (std::size_t j = 0; j < m.data_dim(); ++j) x.at(0, j) = x.at(1, j) = rng.normal();
    for (std::size_t j = 0; j < m.d_Z; ++j) z.at(0, j) = z.at(1, j) = rng.normal();
    Array v = flow::vf_forward(st, x, z, 0.7);
    for (std::size_t j = 0; j < m.data_dim(); ++j) CHECK(v.at(0, j) == v.at(1, j));
}

TEST_CASE("vf gradient check on all parameters") {
    flow::ModelConfig m = tiny_model();
    m.side = 3;  // keep the FD sweep small ... 9 pixels
    m.enc_hidden = {6};
    m.vf_width = 10;
    m.emb_dim = 6;
    flow::ModelState st = flow::init_model(m, 9);
    StreamRng prng(10, "pert");
    for (auto& [k, a] : st.params)
        for (double& vv : a.data) vv += 0.1 * prng.normal();

    const std::size_t B = 4;
    const flow::VfConfig vc = m.vf();
    ad::Graph g;
    ad::NodeId x = g.input("x_t", {B, vc.data_dim});
    ad::NodeId z = g.input("z", {B, vc.d_Z});
    ad::NodeId tf = g.input("tfeat", {B, vc.time_feat});
    ad::NodeId v = flow::build_vf(g, vc, x, z, tf);
    ad::NodeId root = g.mean(g.square(v));

    StreamRng rng(11, "bind");
    Array xv({B, vc.data_dim}), zv({B, vc.d_Z});
    for (double& val : xv.data) val = rng.normal();
    for (double& val : zv.data) val = rng.normal();
    std::vector<double> ts(B);
    for (double& t : ts) t = rng.uniform();
    model::bind_params(g, st.params);
    g.bind("x_t", xv);
    g.bind("z", zv);
    g.bind("tfeat", flow::time_features(ts, vc.time_feat));

    std::vector<std::string> names;
    for (const auto& [name, arr] : st.params)
        if (name.rfind("vf.", 0) == 0) names.push_back(name);
    CHECK(ad::grad_check(g, root, names, 1e-5) <= 1e-5);
}

TEST_CASE("cfm_loss: zero field against x0 = 0 gives mean ||x1||^2") {
    flow::ModelConfig m = tiny_model();
    flow::ModelState st = flow::init_model(m, 12);  // zero-init out layer -> v == 0
    StreamRng rng(13, "cfm");
    const std::size_t B = 5, p = m.data_dim();
    Array x0({B, p});
    Array x1({B, p});
    for (double& v : x1.data) v = rng.normal();
    Array z({B, m.d_Z});
    Array t({B, 1});
    for (double& v : t.data) v = rng.uniform();

    double expected = 0.0;
    for (double v : x1.data) expected += v * v;
    expected /= static_cast<double>(B * p);

    const double got = flow::cfm_loss(st, x0, x1, z, t, 0.0, rng);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cfm_loss: zero when source equals data and the field is zero") {
    flow::ModelConfig m = tiny_model();
    flow::ModelState st = flow::init_model(m, 14);
    StreamRng rng(15, "cfm");
    const std::size_t B = 4, p = m.data_dim();
    Array x({B, p});
    for (double& v : x.data) v = rng.normal();
    Array z({B, m.d_Z});
    Array t({B, 1});
    for (double& v : t.data) v = rng.uniform();
    CHECK(flow::cfm_loss(st, x, x, z, t, 0.0, rng) == 0.0);
}

TEST_CASE("train: toy fit drives the loss down by 10x") {
    data::Catalog cat = data::build_catalog(tiny_data(2, 21));
    flow::ModelConfig m = tiny_model();
    flow::TrainConfig t = tiny_train(500, 22);
    t.lr = 3e-3;
    t.weights.beta = 0.0;
    t.weights.lambda1 = 0.0;
    t.weights.lambda2 = 0.0;
    t.batch = 8;

    flow::ModelState st = flow::init_model(m, 23);
    std::vector<flow::TraceRow> trace;
    flow::train(cat, t, st, trace);
    REQUIRE(trace.size() == 500);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
        first += trace[i].cfm;
        last += trace[trace.size() - 1 - i].cfm;
    }
    CHECK(last < 0.1 * first);
}

TEST_CASE("train: steps = 0 returns the initialized state unchanged") {
    data::Catalog cat = data::build_catalog(tiny_data(8));
    flow::ModelConfig m = tiny_model();
    flow::ModelState st = flow::init_model(m, 30);
    const ad::ParamMap before = st.params;
    std::vector<flow::TraceRow> trace;
    flow::TrainConfig t = tiny_train(0);
    flow::train(cat, t, st, trace);
    CHECK(trace.empty());
    CHECK(st.step == 0);
    for (const auto& [k, a] : before) CHECK(st.params.at(k).data == a.data);
}

TEST_CASE("train: identical seeds give bit-identical parameters") {
    data::Catalog cat = data::build_catalog(tiny_data(16));
    auto run = [&] {
        flow::ModelState st = flow::init_model(tiny_model(), 31);
        std::vector<flow::TraceRow> trace;
        flow::TrainConfig t = tiny_train(25, 32);
        flow::train(cat, t, st, trace);
        return st;
    };
    flow::ModelState a = run();
    flow::ModelState b = run();
    for (const auto& [k, arr] : a.params) CHECK(b.params.at(k).data == arr.data);
}

TEST_CASE("train: resume from a mid-run state matches the uninterrupted run bit-exactly") {
    data::Catalog cat = data::build_catalog(tiny_data(16, 33));
    flow::ModelConfig m = tiny_model();

    flow::ModelState full = flow::init_model(m, 34);
    std::vector<flow::TraceRow> trace_full;
    flow::TrainConfig t10 = tiny_train(10, 35);
    flow::train(cat, t10, full, trace_full);

    flow::ModelState part = flow::init_model(m, 34);
    std::vector<flow::TraceRow> tr;
    flow::TrainConfig t4 = tiny_train(4, 35);
    flow::train(cat, t4, part, tr);
    CHECK(part.step == 4);
    flow::train(cat, t10, part, tr);  // continue to 10

    CHECK(part.step == full.step);
    for (const auto& [k, arr] : full.params) CHECK(part.params.at(k).data == arr.data);
    for (const auto& [k, arr] : full.opt.m) CHECK(part.opt.m.at(k).data == arr.data);
    for (const auto& [k, arr] : full.opt.v) CHECK(part.opt.v.at(k).data == arr.data);
}

TEST_CASE("train: non-finite input aborts with the step index") {
    data::Catalog cat = data::build_catalog(tiny_data(8, 36));
    cat.images.data[3] = std::nan("");
    flow::ModelState st = flow::init_model(tiny_model(), 37);
    std::vector<flow::TraceRow> trace;
    flow::TrainConfig t = tiny_train(5, 38);
    CHECK_THROWS_WITH_AS(flow::train(cat, t, st, trace), doctest::Contains("step"), NumericError);
}

TEST_CASE("train: batch below 3 is rejected") {
    flow::TrainConfig t = tiny_train(1);
    t.batch = 2;
    CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("train: loss trace components sum to the total") {
    data::Catalog cat = data::build_catalog(tiny_data(16, 40));
    flow::ModelState st = flow::init_model(tiny_model(), 41);
    std::vector<flow::TraceRow> trace;
    flow::TrainConfig t = tiny_train(3, 42);
    t.weights.beta = 0.01;
    t.weights.lambda1 = 0.1;
    t.weights.lambda2 = 0.05;
    flow::train(cat, t, st, trace);
    for (const auto& r : trace) {
        const double recon = r.cfm + 0.01 * r.kl + 0.1 * (r.align + r.intra) + 0.05 * r.inter;
        CHECK(r.total == doctest::Approx(recon).epsilon(1e-12));
    }
}

TEST_CASE("time_features: bounded and deterministic") {
    auto f1 = flow::time_features({0.0, 0.5, 1.0}, 8);
    auto f2 = flow::time_features({0.0, 0.5, 1.0}, 8);
    CHECK(f1.data == f2.data);
    for (double v : f1.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(f1.shape == ad::Shape{3, 8});
}

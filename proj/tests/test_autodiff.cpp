#include <doctest.h>

#include <cmath>

#include "dlcfm/adam.hpp"
#include "dlcfm/errors.hpp"
#include "dlcfm/graph.hpp"
#include "dlcfm/rng.hpp"

using namespace dlcfm;
using ad::Array;
using ad::Graph;
using ad::NodeId;

namespace {

Array randu(StreamRng& rng, ad::Shape s, double lo = -1.0, double hi = 1.0) {
    Array a(std::move(s));
    for (double& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

// Independent central-difference oracle (deliberately not grad_check).
double fd_entry(Graph& g, NodeId root, const std::string& name, std::size_t i, double eps) {
    Array base = g.bound(name);
    Array pert = base;
    pert.data[i] = base.data[i] + eps;
    g.bind(name, pert);
    const double fp = g.forward(root).data[0];
    pert.data[i] = base.data[i] - eps;
    g.bind(name, pert);
    const double fm = g.forward(root).data[0];
    g.bind(name, base);
    g.forward(root);
    return (fp - fm) / (2.0 * eps);
}

}  // namespace

TEST_CASE("forward: scalar square") {
    Graph g;
    NodeId x = g.input("x", {1, 1});
    NodeId y = g.mul(x, x);
    g.bind("x", Array::scalar(3.0));
    CHECK(g.forward(y).data[0] == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("forward: matmul shape rule and values") {
    Graph g;
    NodeId a = g.input("a", {2, 3});
    NodeId b = g.input("b", {3, 1});
    NodeId c = g.matmul(a, b);
    CHECK(g.shape(c) == ad::Shape{2, 1});

    Array av({2, 3}, {1, 2, 3, 4, 5, 6});
    Array bv({3, 1}, {1, 0, -1});
    g.bind("a", av);
    g.bind("b", bv);
    const Array& out = g.forward(c);
    CHECK(out.data[0] == doctest::Approx(-2.0));
    CHECK(out.data[1] == doctest::Approx(-2.0));
}

TEST_CASE("forward: softplus at zero is ln 2") {
    Graph g;
    NodeId x = g.input("x", {1, 1});
    NodeId y = g.softplus(x);
    g.bind("x", Array::scalar(0.0));
    // oracle: ln(1 + e^0) evaluated independently
    CHECK(g.forward(y).data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("forward: shape mismatch names op and shapes") {
    Graph g;
    NodeId a = g.input("a", {2, 3});
    NodeId b = g.input("b", {4, 1});
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), NumericError);
    try {
        g.matmul(a, b);
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2x3)") != std::string::npos);
        CHECK(msg.find("(4x1)") != std::string::npos);
    }
}

TEST_CASE("backward: x^2 at 3") {
    Graph g;
    NodeId x = g.param("x", {1, 1});
    NodeId y = g.mul(x, x);
    g.bind("x", Array::scalar(3.0));
    g.forward(y);
    g.backward(y);
    CHECK(g.grad(x).data[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("backward: constant wrt x is zero") {
    Graph g;
    NodeId x = g.param("x", {1, 1});
    NodeId c = g.constant(5.0);
    NodeId y = g.add(g.mul(x, g.constant(0.0)), c);
    g.bind("x", Array::scalar(2.0));
    g.forward(y);
    g.backward(y);
    CHECK(g.grad(x).data[0] == 0.0);
}

TEST_CASE("backward: d sum(W v) / dW_ij = v_j") {
    StreamRng rng(42, "test.wv");
    Graph g;
    NodeId w = g.param("W", {4, 3});
    NodeId v = g.constant(randu(rng, {3, 1}));
    NodeId y = g.sum(g.matmul(w, v));
    g.bind("W", randu(rng, {4, 3}));
    g.forward(y);
    g.backward(y);
    const Array& grad = g.grad(w);
    const Array& vv = g.value(v);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(grad.at(i, j) == doctest::Approx(vv.data[j]).epsilon(1e-12));
            // finite-difference oracle
            CHECK(grad.at(i, j) ==
                  doctest::Approx(fd_entry(g, y, "W", i * 3 + j, 1e-6)).epsilon(1e-6));
        }
}

TEST_CASE("backward before forward is an error") {
    Graph g;
    NodeId x = g.param("x", {1, 1});
    NodeId y = g.square(x);
    g.bind("x", Array::scalar(1.0));
    CHECK_THROWS_AS(g.backward(y), NumericError);
}

TEST_CASE("grad_check: linear model is exact to rounding") {
    StreamRng rng(7, "test.lin");
    Graph g;
    NodeId w = g.param("w", {5, 1});
    NodeId x = g.constant(randu(rng, {1, 5}));
    NodeId y = g.sum(g.matmul(x, w));
    g.bind("w", randu(rng, {5, 1}));
    CHECK(ad::grad_check(g, y, {"w"}, 1e-5) <= 1e-6);
}

TEST_CASE("grad_check: two-layer tanh network") {
    StreamRng rng(8, "test.tanh");
    Graph g;
    NodeId x = g.input("x", {4, 6});
    NodeId w1 = g.param("w1", {6, 5});
    NodeId b1 = g.param("b1", {1, 5});
    NodeId w2 = g.param("w2", {5, 2});
    NodeId h = g.tanh(g.affine(x, w1, b1));
    NodeId y = g.mean(g.square(g.tanh(g.matmul(h, w2))));
    g.bind("x", randu(rng, {4, 6}));
    g.bind("w1", randu(rng, {6, 5}));
    g.bind("b1", randu(rng, {1, 5}));
    g.bind("w2", randu(rng, {5, 2}));
    CHECK(ad::grad_check(g, y, {"w1", "b1", "w2"}, 1e-5) <= 1e-5);
}

TEST_CASE("grad_check: epsilon zero is invalid") {
    Graph g;
    NodeId x = g.param("x", {1, 1});
    NodeId y = g.square(x);
    g.bind("x", Array::scalar(1.0));
    CHECK_THROWS_AS(ad::grad_check(g, y, {"x"}, 0.0), NumericError);
}

TEST_CASE("grad_check: non-scalar output is invalid") {
    Graph g;
    NodeId x = g.param("x", {2, 2});
    NodeId y = g.square(x);
    g.bind("x", Array::full({2, 2}, 1.0));
    CHECK_THROWS_AS(ad::grad_check(g, y, {"x"}, 1e-5), NumericError);
}

TEST_CASE("all ops match finite differences on randomized shapes") {
    // Kinked ops (relu family, abs) are sampled off their kinks; central
    // differences are meaningless across a non-differentiable point.
    auto off_kink = [](StreamRng& rng, ad::Shape s) {
        Array a(std::move(s));
        for (double& v : a.data) {
            const double mag = rng.uniform(0.05, 1.0);
            v = rng.uniform() < 0.5 ? -mag : mag;
        }
        return a;
    };

    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        StreamRng rng(seed, "test.ops");
        const std::size_t n = 2 + rng.uniform_index(63);
        const std::size_t m = 2 + rng.uniform_index(63);

        {
            // smooth-op expression with matmul/reductions/concat/slice
            Graph g;
            NodeId x = g.param("x", {n, m});
            NodeId w = g.param("w", {m, 3});
            NodeId h = g.matmul(g.tanh(x), w);
            NodeId e = g.exp(g.scale(h, 0.1));
            NodeId lg = g.log(g.add_const(g.square(h), 1.0));
            NodeId cat = g.concat_cols(e, lg);
            NodeId sl = g.slice_cols(cat, 1, 4);
            NodeId red = g.add(g.broadcast(g.col_mean(sl), g.shape(sl)), sl);
            NodeId y = g.add(g.mean(red), g.scale(g.sum(g.softplus(sl)), 1e-2));
            g.bind("x", randu(rng, {n, m}));
            g.bind("w", randu(rng, {m, 3}));
            CHECK(ad::grad_check(g, y, {"x", "w"}, 1e-5) <= 1e-5);
        }
        {
            // kinked ops with inputs bounded away from zero
            Graph g;
            NodeId x = g.param("x", {n, 4});
            NodeId y = g.mean(g.concat_cols(g.add(g.relu(x), g.leaky_relu(x, 0.01)),
                                            g.square(g.abs_val(x))));
            g.bind("x", off_kink(rng, {n, 4}));
            CHECK(ad::grad_check(g, y, {"x"}, 1e-5) <= 1e-5);
        }
    }
}

TEST_CASE("backward linearity: grad of sum equals sum of grads") {
    StreamRng rng(9, "test.linearity");
    Array xv = randu(rng, {3, 3});

    auto build = [&](Graph& g, bool first, bool second) {
        NodeId x = g.param("x", {3, 3});
        NodeId f = g.mean(g.square(x));
        NodeId h = g.sum(g.tanh(x));
        g.bind("x", xv);
        NodeId root = first && second ? g.add(f, h) : (first ? f : h);
        g.forward(root);
        g.backward(root);
        return g.grad(x);
    };

    Graph g1, g2, g12;
    Array gf = build(g1, true, false);
    Array gh = build(g2, false, true);
    Array gsum = build(g12, true, true);
    for (std::size_t i = 0; i < gsum.numel(); ++i)
        CHECK(gsum.data[i] == doctest::Approx(gf.data[i] + gh.data[i]).epsilon(1e-14));
}

TEST_CASE("repeated forward/backward is bit-identical") {
    StreamRng rng(10, "test.det");
    Graph g;
    NodeId x = g.param("x", {8, 8});
    NodeId y = g.mean(g.square(g.tanh(g.matmul(x, x))));
    g.bind("x", randu(rng, {8, 8}));
    g.forward(y);
    g.backward(y);
    const Array v1 = g.value(y);
    const Array g1 = g.grad(x);
    g.forward(y);
    g.backward(y);
    CHECK(g.value(y).data == v1.data);
    CHECK(g.grad(x).data == g1.data);
}

TEST_CASE("adam: first step magnitude is ~lr per coordinate") {
    ad::ParamMap params, grads;
    params["w"] = Array::full({1, 3}, 0.5);
    grads["w"] = Array({1, 3}, {2.0, -0.3, 1e-6});
    ad::AdamState st;
    st.lr = 1e-3;
    Array before = params["w"];
    ad::adam_step(params, grads, st);
    for (std::size_t i = 0; i < 3; ++i) {
        const double gi = grads["w"].data[i];
        // one-step oracle: m_hat = g, v_hat = g^2, delta = lr g / (|g| + eps)
        const double expect = st.lr * gi / (std::abs(gi) + st.eps);
        CHECK(before.data[i] - params["w"].data[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(st.step == 1);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ad::ParamMap params, grads;
    params["w"] = Array({2, 2}, {1.0, 2.0, 3.0, 4.0});
    grads["w"] = Array({2, 2});
    ad::AdamState st;
    Array before = params["w"];
    ad::adam_step(params, grads, st);
    CHECK(params["w"].data == before.data);
}

TEST_CASE("adam: identical steps from identical state are identical") {
    auto run = [] {
        ad::ParamMap params, grads;
        params["a"] = Array({1, 4}, {0.1, -0.2, 0.3, -0.4});
        grads["a"] = Array({1, 4}, {0.5, 0.25, -1.0, 2.0});
        ad::AdamState st;
        st.lr = 3e-4;
        ad::adam_step(params, grads, st);
        ad::adam_step(params, grads, st);
        return params["a"].data;
    };
    CHECK(run() == run());
}

TEST_CASE("adam: NaN gradient names the parameter") {
    ad::ParamMap params, grads;
    params["enc.w0"] = Array::full({1, 2}, 1.0);
    grads["enc.w0"] = Array({1, 2}, {0.0, std::nan("")});
    ad::AdamState st;
    CHECK_THROWS_WITH_AS(ad::adam_step(params, grads, st), doctest::Contains("enc.w0"), NumericError);
}

TEST_CASE("unbound leaf is reported by name") {
    Graph g;
    NodeId x = g.input("obs", {1, 2});
    NodeId y = g.sum(x);
    CHECK_THROWS_WITH_AS(g.forward(y), doctest::Contains("obs"), NumericError);
}

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dlcfm::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major array of doubles. Rank is arbitrary for storage
// (catalog images are n x side x side); graph operations require rank 2.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Array(Shape s, std::vector<double> d);

    static Array zeros(Shape s) { return Array(std::move(s)); }
    static Array full(Shape s, double v);
    static Array scalar(double v) { return full({1, 1}, v); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }
    bool all_finite() const;

    Array reshaped(Shape s) const;
};

// Deterministic exact sum helpers. pairwise_sum is reduction-order fixed
// (recursive halving), so block-parallel callers can reproduce it exactly.
double pairwise_sum(std::span<const double> v);

// C = op_a(A) * op_b(B) for rank-2 arrays; at most one side transposed.
Array matmul(const Array& a, const Array& b, bool ta = false, bool tb = false);
// C += op_a(A) * op_b(B), shapes already validated by caller.
void matmul_acc(Array& c, const Array& a, const Array& b, bool ta, bool tb);

// Cooperative parallel loop over [0, n). Thread count is capped by the
// DLCFM_THREADS environment variable; block partition is fixed so results
// never depend on the number of threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& block_fn);
std::size_t effective_threads();

}  // namespace dlcfm::ad

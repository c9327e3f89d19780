#include "dlcfm/array.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "dlcfm/errors.hpp"

namespace dlcfm::ad {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        if (d == 0) throw NumericError("array shape has zero dimension " + shape_str(s));
        n *= d;
    }
    return n;
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
        throw NumericError("array data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
}

Array Array::full(Shape s, double v) {
    Array a(std::move(s));
    std::fill(a.data.begin(), a.data.end(), v);
    return a;
}

std::size_t Array::rows() const {
    if (shape.size() != 2) throw NumericError("expected rank-2 array, got shape " + shape_str(shape));
    return shape[0];
}

std::size_t Array::cols() const {
    if (shape.size() != 2) throw NumericError("expected rank-2 array, got shape " + shape_str(shape));
    return shape[1];
}

bool Array::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Array Array::reshaped(Shape s) const {
    if (shape_numel(s) != numel())
        throw NumericError("reshape " + shape_str(shape) + " -> " + shape_str(s) + " changes element count");
    Array out = *this;
    out.shape = std::move(s);
    return out;
}

double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 32) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

std::size_t effective_threads() {
    static const std::size_t cached = [] {
        std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("DLCFM_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end != env && v >= 1) hw = std::min<std::size_t>(hw, static_cast<std::size_t>(v));
        }
        return hw;
    }();
    return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& block_fn) {
    const std::size_t nthreads = std::min(effective_threads(), n == 0 ? std::size_t{1} : n);
    if (n == 0) return;
    if (nthreads <= 1) {
        block_fn(0, n);
        return;
    }
    // Fixed block partition: results are identical for any thread count.
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    const std::size_t chunk = (n + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] { block_fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

namespace {

// C(i,:) accumulation kernels. The j-inner loops are contiguous and
// vectorize under -O3.
void mm_nn(Array& c, const Array& a, const Array& b, std::size_t row_lo, std::size_t row_hi) {
    const std::size_t k = a.cols(), m = b.cols();
    const double* bd = b.data.data();
    for (std::size_t i = row_lo; i < row_hi; ++i) {
        double* ci = c.data.data() + i * m;
        const double* ai = a.data.data() + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ai[l];
            if (av == 0.0) continue;
            const double* bl = bd + l * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
        }
    }
}

void mm_tn(Array& c, const Array& a, const Array& b) {
    // C = A^T * B, A is (n x k), B is (n x m), C is (k x m).
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t l = 0; l < n; ++l) {
        const double* al = a.data.data() + l * k;
        const double* bl = b.data.data() + l * m;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = al[i];
            if (av == 0.0) continue;
            double* ci = c.data.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
        }
    }
}

void mm_nt(Array& c, const Array& a, const Array& b, std::size_t row_lo, std::size_t row_hi) {
    // C = A * B^T, A is (n x k), B is (m x k), C is (n x m).
    const std::size_t k = a.cols(), m = b.rows();
    for (std::size_t i = row_lo; i < row_hi; ++i) {
        const double* ai = a.data.data() + i * k;
        double* ci = c.data.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.data.data() + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] += acc;
        }
    }
}

}  // namespace

void matmul_acc(Array& c, const Array& a, const Array& b, bool ta, bool tb) {
    if (ta && tb) throw NumericError("matmul: double transpose is not supported");
    if (ta) {
        mm_tn(c, a, b);
    } else if (tb) {
        const std::size_t n = a.rows();
        parallel_for(n, [&](std::size_t lo, std::size_t hi) { mm_nt(c, a, b, lo, hi); });
    } else {
        const std::size_t n = a.rows();
        parallel_for(n, [&](std::size_t lo, std::size_t hi) { mm_nn(c, a, b, lo, hi); });
    }
}

Array matmul(const Array& a, const Array& b, bool ta, bool tb) {
    const std::size_t ar = ta ? a.cols() : a.rows();
    const std::size_t ac = ta ? a.rows() : a.cols();
    const std::size_t br = tb ? b.cols() : b.rows();
    const std::size_t bc = tb ? b.rows() : b.cols();
    if (ac != br)
        throw NumericError("matmul: inner dimensions differ: " + shape_str(a.shape) +
                           (ta ? "^T" : "") + " vs " + shape_str(b.shape) + (tb ? "^T" : ""));
    Array c({ar, bc});
    matmul_acc(c, a, b, ta, tb);
    return c;
}

}  // namespace dlcfm::ad

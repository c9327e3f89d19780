#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dlcfm {

// Counter-based deterministic random stream.
//
// A stream is addressed by (seed, label) and an optional fork index, so
// data generation, training and sampling draw from independent, replayable
// streams. Draw k of stream (seed, label, i) never depends on how other
// streams were consumed, which is what makes checkpoint resume and
// parallel rendering bit-identical to serial execution.
class StreamRng {
  public:
    StreamRng(std::uint64_t seed, std::string_view label) : state_(mix(seed ^ kLabelSalt)) {
        for (char c : label) state_ = mix(state_ ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    }

    // Independent child stream, e.g. one per halo index or training step.
    StreamRng fork(std::uint64_t index) const {
        StreamRng child = *this;
        child.state_ = mix(state_ ^ mix(index + 0x9e3779b97f4a7c15ull));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() { return mix(state_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Consumes exactly two uniforms per
    // call (no caching) so draw counts stay trivially replayable.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // u1 == 0 would take log(0); nudge to the smallest representable draw.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  private:
    static constexpr double kPi = 3.14159265358979323846;
    static constexpr std::uint64_t kLabelSalt = 0xd1b54a32d192ed03ull;

    // splitmix64 finalizer.
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t state_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace dlcfm

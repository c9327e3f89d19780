#include "dlcfm/image_stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dlcfm::img {

double total_flux(std::span<const double> img) {
    double s = 0.0;
    for (double v : img) s += v;
    return s;
}

double half_light_radius(std::span<const double> img, std::size_t side) {
    const std::size_t n = img.size();
    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (img[i] > img[peak]) peak = i;
    const double cx = static_cast<double>(peak % side);
    const double cy = static_cast<double>(peak / side);

    struct Px {
        double r;
        double v;
    };
    std::vector<Px> px(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(i % side) - cx;
        const double dy = static_cast<double>(i / side) - cy;
        const double v = std::max(img[i], 0.0);
        px[i] = {std::sqrt(dx * dx + dy * dy), v};
        total += v;
    }
    if (total <= 0.0) return 0.0;
    std::sort(px.begin(), px.end(), [](const Px& a, const Px& b) { return a.r < b.r; });

    // Group equal-distance rings and interpolate the crossing between ring
    // radii so the statistic moves continuously with the profile.
    const double half = 0.5 * total;
    double cum = 0.0, prev_r = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        double ring = 0.0;
        while (j < n && px[j].r == px[i].r) ring += px[j++].v;
        if (cum + ring >= half) {
            const double frac = ring > 0.0 ? (half - cum) / ring : 0.0;
            return prev_r + frac * (px[i].r - prev_r);
        }
        cum += ring;
        prev_r = px[i].r;
        i = j;
    }
    return px.back().r;
}

int local_maxima_count(std::span<const double> img, std::size_t side, double frac) {
    double peak = img[0];
    for (double v : img) peak = std::max(peak, v);
    if (!(peak > 0.0)) return 0;
    const double thresh = frac * peak;

    // Ties (flat plateaus, e.g. a peak centered between pixels) count once:
    // an equal-valued neighbor only disqualifies the later index.
    int count = 0;
    const auto s = static_cast<std::ptrdiff_t>(side);
    for (std::ptrdiff_t y = 0; y < s; ++y) {
        for (std::ptrdiff_t x = 0; x < s; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y * s + x);
            const double v = img[idx];
            if (v < thresh) continue;
            bool is_max = true;
            for (std::ptrdiff_t dy = -1; dy <= 1 && is_max; ++dy) {
                for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const std::ptrdiff_t nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= s || ny >= s) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny * s + nx);
                    const double nv = img[nidx];
                    if (nv > v || (nv == v && nidx < idx)) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) ++count;
        }
    }
    return count;
}

}  // namespace dlcfm::img

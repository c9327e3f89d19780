#pragma once

#include <cstddef>
#include <span>

namespace dlcfm::img {

// Per-image summary statistics used by the sampler CSVs and the
// morphology diagnostics. Images are row-major side x side.

// Plain pixel sum.
double total_flux(std::span<const double> img);

// Radius (in pixels, from the brightest pixel) enclosing half the flux.
// Pixels are accumulated in order of distance with linear interpolation at
// the crossing, so the statistic varies continuously with the profile.
// Negative pixels are clipped to zero for the accumulation.
double half_light_radius(std::span<const double> img, std::size_t side);

// Count of strict 8-neighborhood local maxima at or above
// `frac * max(img)`.
int local_maxima_count(std::span<const double> img, std::size_t side, double frac = 0.1);

}  // namespace dlcfm::img

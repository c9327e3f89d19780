#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlcfm/array.hpp"
#include "dlcfm/rng.hpp"

namespace dlcfm::data {

// Knobs of the synthetic halo-image generator. Concentration follows
// c = c0 * (M / M_pivot)^(-alpha) * exp(sigma_c * eps) with M_pivot the
// geometric mean of the mass range, which gives the negative
// mass-concentration coupling the diagnostics look for.
struct DataConfig {
    std::size_t n = 2000;
    std::size_t side = 16;
    std::uint64_t seed = 7;
    double mass_min = 3.1622776601683795e13;  // 10^13.5
    double mass_max = 1e15;
    double conc_c0 = 5.0;
    double conc_alpha = 0.15;
    double conc_sigma = 0.40;
    double merger_prob = 0.15;
    double ellipticity_max = 0.4;
    double offset_sigma = 0.6;  // pixels
    double sec_amp_min = 0.3;
    double sec_amp_max = 1.0;
    double holdout_fraction = 0.2;

    void validate() const;
};

struct HaloParams {
    double mass = 1e14;
    double concentration = 5.0;
    double ellipticity = 0.0;   // [0, 0.5)
    double orientation = 0.0;   // [0, pi)
    double offset_x = 0.0;      // pixels
    double offset_y = 0.0;
    bool merger = false;
    double sec_dx = 0.0;  // secondary peak offset, pixels
    double sec_dy = 0.0;
    double sec_amp = 0.0;  // relative amplitude in (0, 1]
};

struct HaloImage {
    ad::Array pixels;  // (side, side), raw profile values
    HaloParams params;
};

struct Catalog {
    std::size_t side = 16;
    std::size_t d = 2;
    std::uint64_t seed = 0;
    ad::Array images;  // (n, side, side), log1p + min-max scaled to [0, 1]
    ad::Array aux;     // (n, 2): normalized log10-mass, normalized concentration
    std::vector<HaloParams> params;
    double aux_min[2] = {0, 0};
    double aux_max[2] = {1, 1};
    double pix_min = 0.0;  // log1p domain
    double pix_max = 1.0;
    std::size_t n_holdout = 0;
    DataConfig config;

    std::size_t size() const { return images.shape[0]; }
    std::size_t n_train() const { return size() - n_holdout; }
    std::size_t pixel_count() const { return side * side; }

    // Flattened image row i as a (1 x side*side) view copy.
    ad::Array image_row(std::size_t i) const;
};

// One halo's parameters from its own substream; serial and parallel
// generation agree because halo i only ever touches fork(i).
HaloParams sample_one(StreamRng rng, const DataConfig& cfg);
std::vector<HaloParams> sample_params(std::uint64_t seed, std::size_t n, const DataConfig& cfg);

// Pure function of (params, side): raw elliptical beta-model-like profile,
// amplitude (M / 1e14)^(5/3) at the profile center, scale radius set by
// the concentration on a grid spanning four characteristic radii.
ad::Array render(const HaloParams& params, std::size_t side);

Catalog build_catalog(const DataConfig& cfg);

void write_catalog(const Catalog& cat, const std::string& path);
Catalog read_catalog(const std::string& path);

}  // namespace dlcfm::data

#include "dlcfm/halo.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dlcfm/container.hpp"
#include "dlcfm/errors.hpp"

namespace dlcfm::data {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kPivotMass = 1e14;  // amplitude reference for render()
}  // namespace

void DataConfig::validate() const {
    if (side < 8) throw ConfigError("data.side must be >= 8");
    if (!(mass_min > 0.0) || !(mass_max > mass_min))
        throw ConfigError("data: invalid mass range [" + std::to_string(mass_min) + ", " +
                          std::to_string(mass_max) + "]");
    if (!(conc_c0 > 0.0)) throw ConfigError("data.conc_c0 must be positive");
    if (conc_alpha < 0.0) throw ConfigError("data.conc_alpha must be >= 0");
    if (conc_sigma < 0.0) throw ConfigError("data.conc_sigma must be >= 0");
    if (merger_prob < 0.0 || merger_prob > 1.0) throw ConfigError("data.merger_prob must be in [0, 1]");
    if (ellipticity_max < 0.0 || ellipticity_max >= 0.5)
        throw ConfigError("data.ellipticity_max must be in [0, 0.5)");
    if (!(sec_amp_min > 0.0) || sec_amp_max > 1.0 || sec_amp_min > sec_amp_max)
        throw ConfigError("data: secondary amplitude range must satisfy 0 < min <= max <= 1");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ConfigError("data.holdout_fraction must be in [0, 1)");
}

HaloParams sample_one(StreamRng rng, const DataConfig& cfg) {
    HaloParams p;
    const double lm = rng.uniform(std::log10(cfg.mass_min), std::log10(cfg.mass_max));
    p.mass = std::pow(10.0, lm);

    const double pivot = std::sqrt(cfg.mass_min * cfg.mass_max);
    const double eps = rng.normal();
    p.concentration = cfg.conc_c0 * std::pow(p.mass / pivot, -cfg.conc_alpha) *
                      std::exp(cfg.conc_sigma * eps);

    p.ellipticity = rng.uniform(0.0, cfg.ellipticity_max);
    p.orientation = rng.uniform(0.0, kPi);

    // Offsets are clipped at two pixels so the peak stays well in bounds.
    const double clip = 2.0;
    p.offset_x = std::clamp(cfg.offset_sigma * rng.normal(), -clip, clip);
    p.offset_y = std::clamp(cfg.offset_sigma * rng.normal(), -clip, clip);

    p.merger = rng.uniform() < cfg.merger_prob;
    // Secondary-peak draws are consumed either way to keep each halo's
    // stream layout fixed.
    const double ang = rng.uniform(0.0, 2.0 * kPi);
    const double dist = rng.uniform(static_cast<double>(cfg.side) / 8.0, static_cast<double>(cfg.side) / 4.0);
    const double amp = rng.uniform(cfg.sec_amp_min, cfg.sec_amp_max);
    if (p.merger) {
        p.sec_dx = dist * std::cos(ang);
        p.sec_dy = dist * std::sin(ang);
        p.sec_amp = amp;
    }
    return p;
}

std::vector<HaloParams> sample_params(std::uint64_t seed, std::size_t n, const DataConfig& cfg) {
    if (n < 1) throw ConfigError("sample_params: n must be >= 1");
    cfg.validate();
    StreamRng base(seed, "data");
    std::vector<HaloParams> out(n);
    ad::parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) out[i] = sample_one(base.fork(i), cfg);
    });
    return out;
}

ad::Array render(const HaloParams& p, std::size_t side) {
    if (side < 8) throw ConfigError("render: side must be >= 8");
    const double amplitude = std::pow(p.mass / kPivotMass, 5.0 / 3.0);
    const double q = 1.0 - p.ellipticity;
    const double ct = std::cos(p.orientation), st = std::sin(p.orientation);
    const double center = (static_cast<double>(side) - 1.0) / 2.0;
    // The grid spans four characteristic radii per side, so the scale
    // radius in units of the side is 1 / (4 c): distances in side units
    // multiply by 4 c.
    const double inv_side = 1.0 / static_cast<double>(side);
    const double k = 4.0 * p.concentration;

    auto profile = [&](double dx, double dy) {
        const double u = ct * dx + st * dy;
        const double v = (-st * dx + ct * dy) / q;
        const double s = k * std::sqrt(u * u + v * v) * inv_side;
        return std::pow(1.0 + s * s, -1.5);
    };

    ad::Array img({side, side});
    for (std::size_t iy = 0; iy < side; ++iy) {
        for (std::size_t ix = 0; ix < side; ++ix) {
            const double dx = static_cast<double>(ix) - center - p.offset_x;
            const double dy = static_cast<double>(iy) - center - p.offset_y;
            double val = amplitude * profile(dx, dy);
            if (p.merger) {
                val += p.sec_amp * amplitude * profile(dx - p.sec_dx, dy - p.sec_dy);
            }
            img.data[iy * side + ix] = val;
        }
    }
    return img;
}

Catalog build_catalog(const DataConfig& cfg) {
    if (cfg.n < 2) throw ConfigError("build_catalog: n must be >= 2 (normalization needs a range)");
    cfg.validate();

    Catalog cat;
    cat.side = cfg.side;
    cat.seed = cfg.seed;
    cat.config = cfg;
    cat.params = sample_params(cfg.seed, cfg.n, cfg);
    cat.n_holdout = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(cfg.n)));

    const std::size_t px = cfg.side * cfg.side;
    cat.images = ad::Array({cfg.n, cfg.side, cfg.side});
    ad::parallel_for(cfg.n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            ad::Array img = render(cat.params[i], cfg.side);
            for (std::size_t j = 0; j < px; ++j)
                cat.images.data[i * px + j] = std::log1p(img.data[j]);
        }
    });

    cat.pix_min = cat.images.data[0];
    cat.pix_max = cat.images.data[0];
    for (double v : cat.images.data) {
        cat.pix_min = std::min(cat.pix_min, v);
        cat.pix_max = std::max(cat.pix_max, v);
    }
    if (!(cat.pix_max > cat.pix_min))
        throw NumericError("build_catalog: degenerate pixel range (min == max)");
    const double inv_range = 1.0 / (cat.pix_max - cat.pix_min);
    for (double& v : cat.images.data) v = (v - cat.pix_min) * inv_range;

    cat.aux = ad::Array({cfg.n, 2});
    for (std::size_t i = 0; i < cfg.n; ++i) {
        cat.aux.at(i, 0) = std::log10(cat.params[i].mass);
        cat.aux.at(i, 1) = cat.params[i].concentration;
    }
    for (int j = 0; j < 2; ++j) {
        double lo = cat.aux.at(0, j), hi = cat.aux.at(0, j);
        for (std::size_t i = 1; i < cfg.n; ++i) {
            lo = std::min(lo, cat.aux.at(i, static_cast<std::size_t>(j)));
            hi = std::max(hi, cat.aux.at(i, static_cast<std::size_t>(j)));
        }
        if (!(hi > lo))
            throw NumericError("build_catalog: degenerate auxiliary range for component " + std::to_string(j));
        cat.aux_min[j] = lo;
        cat.aux_max[j] = hi;
        for (std::size_t i = 0; i < cfg.n; ++i) {
            double& u = cat.aux.data[i * 2 + static_cast<std::size_t>(j)];
            u = (u - lo) / (hi - lo);
        }
    }
    return cat;
}

ad::Array Catalog::image_row(std::size_t i) const {
    const std::size_t px = pixel_count();
    ad::Array row({1, px});
    std::copy_n(images.data.begin() + static_cast<std::ptrdiff_t>(i * px), px, row.data.begin());
    return row;
}

namespace {

nlohmann::json config_to_json(const DataConfig& c) {
    return {
        {"n", c.n},
        {"side", c.side},
        {"seed", c.seed},
        {"mass_min", c.mass_min},
        {"mass_max", c.mass_max},
        {"conc_c0", c.conc_c0},
        {"conc_alpha", c.conc_alpha},
        {"conc_sigma", c.conc_sigma},
        {"merger_prob", c.merger_prob},
        {"ellipticity_max", c.ellipticity_max},
        {"offset_sigma", c.offset_sigma},
        {"sec_amp_min", c.sec_amp_min},
        {"sec_amp_max", c.sec_amp_max},
        {"holdout_fraction", c.holdout_fraction},
    };
}

DataConfig config_from_json(const nlohmann::json& j) {
    DataConfig c;
    c.n = j.at("n").get<std::size_t>();
    c.side = j.at("side").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mass_min = j.at("mass_min").get<double>();
    c.mass_max = j.at("mass_max").get<double>();
    c.conc_c0 = j.at("conc_c0").get<double>();
    c.conc_alpha = j.at("conc_alpha").get<double>();
    c.conc_sigma = j.at("conc_sigma").get<double>();
    c.merger_prob = j.at("merger_prob").get<double>();
    c.ellipticity_max = j.at("ellipticity_max").get<double>();
    c.offset_sigma = j.at("offset_sigma").get<double>();
    c.sec_amp_min = j.at("sec_amp_min").get<double>();
    c.sec_amp_max = j.at("sec_amp_max").get<double>();
    c.holdout_fraction = j.at("holdout_fraction").get<double>();
    return c;
}

}  // namespace

void write_catalog(const Catalog& cat, const std::string& path) {
    io::Container c;
    c.put("images", cat.images);
    c.put("aux", cat.aux);

    const std::size_t n = cat.size();
    ad::Array gt({n, 10});
    for (std::size_t i = 0; i < n; ++i) {
        const HaloParams& p = cat.params[i];
        double* row = gt.data.data() + i * 10;
        row[0] = p.mass;  // raw mass keeps the round-trip bit-exact
        row[1] = p.concentration;
        row[2] = p.ellipticity;
        row[3] = p.orientation;
        row[4] = p.offset_x;
        row[5] = p.offset_y;
        row[6] = p.merger ? 1.0 : 0.0;
        row[7] = p.sec_dx;
        row[8] = p.sec_dy;
        row[9] = p.sec_amp;
    }
    c.put("gt", std::move(gt));

    c.meta = {
        {"kind", "catalog"},
        {"seed", cat.seed},
        {"side", cat.side},
        {"n", n},
        {"d", cat.d},
        {"aux_min", {cat.aux_min[0], cat.aux_min[1]}},
        {"aux_max", {cat.aux_max[0], cat.aux_max[1]}},
        {"pix_min", cat.pix_min},
        {"pix_max", cat.pix_max},
        {"n_holdout", cat.n_holdout},
        {"config", config_to_json(cat.config)},
    };
    io::write_container(c, path);
}

Catalog read_catalog(const std::string& path) {
    io::Container c = io::read_container(path);
    if (!c.meta.contains("kind") || c.meta["kind"] != "catalog")
        throw IoError("'" + path + "' is not a catalog container");

    Catalog cat;
    try {
        cat.seed = c.meta.at("seed").get<std::uint64_t>();
        cat.side = c.meta.at("side").get<std::size_t>();
        cat.d = c.meta.at("d").get<std::size_t>();
        cat.aux_min[0] = c.meta.at("aux_min")[0].get<double>();
        cat.aux_min[1] = c.meta.at("aux_min")[1].get<double>();
        cat.aux_max[0] = c.meta.at("aux_max")[0].get<double>();
        cat.aux_max[1] = c.meta.at("aux_max")[1].get<double>();
        cat.pix_min = c.meta.at("pix_min").get<double>();
        cat.pix_max = c.meta.at("pix_max").get<double>();
        cat.n_holdout = c.meta.at("n_holdout").get<std::size_t>();
        cat.config = config_from_json(c.meta.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("catalog header in '" + path + "' is malformed: " + e.what());
    }

    cat.images = c.get("images");
    cat.aux = c.get("aux");
    const ad::Array& gt = c.get("gt");
    const std::size_t n = cat.images.shape[0];
    if (cat.images.rank() != 3 || cat.images.shape[1] != cat.side || cat.images.shape[2] != cat.side)
        throw IoError("catalog '" + path + "': images shape does not match side " + std::to_string(cat.side));
    if (cat.aux.rank() != 2 || cat.aux.shape[0] != n || cat.aux.shape[1] != 2)
        throw IoError("catalog '" + path + "': aux shape mismatch");
    if (gt.rank() != 2 || gt.shape[0] != n || gt.shape[1] != 10)
        throw IoError("catalog '" + path + "': gt shape mismatch");

    cat.params.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = gt.data.data() + i * 10;
        HaloParams& p = cat.params[i];
        p.mass = row[0];
        p.concentration = row[1];
        p.ellipticity = row[2];
        p.orientation = row[3];
        p.offset_x = row[4];
        p.offset_y = row[5];
        p.merger = row[6] != 0.0;
        p.sec_dx = row[7];
        p.sec_dy = row[8];
        p.sec_amp = row[9];
    }
    return cat;
}

}  // namespace dlcfm::data

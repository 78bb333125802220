// SPDX-License-Identifier: Apache-2.0

#include "wxlab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "wxlab/container.hpp"
#include "wxlab/log.hpp"
#include "wxlab/timeutil.hpp"

namespace wxlab {

static constexpr double kDegToRad = M_PI / 180.0;

GridSpec GridSpec::regular(int64_t n_lat, int64_t n_lon) {
    if (n_lat < 1 || n_lon < 1) throw std::invalid_argument("grid dims must be positive");
    GridSpec g;
    g.n_lat = n_lat;
    g.n_lon = n_lon;
    if (n_lat == 1) {
        g.lats = {0.0};
    } else {
        g.lats.resize(static_cast<size_t>(n_lat));
        for (int64_t i = 0; i < n_lat; ++i) {
            g.lats[static_cast<size_t>(i)] =
                90.0 - 180.0 * static_cast<double>(i) / static_cast<double>(n_lat - 1);
        }
    }
    g.lons.resize(static_cast<size_t>(n_lon));
    for (int64_t j = 0; j < n_lon; ++j) {
        g.lons[static_cast<size_t>(j)] = 360.0 * static_cast<double>(j) / static_cast<double>(n_lon);
    }
    return g;
}

void GridSpec::validate() const {
    if (n_lat < 1 || n_lon < 1) throw std::invalid_argument("grid dims must be positive");
    if (static_cast<int64_t>(lats.size()) != n_lat || static_cast<int64_t>(lons.size()) != n_lon) {
        throw std::invalid_argument("grid coordinate vectors do not match declared dims");
    }
    for (size_t i = 0; i < lats.size(); ++i) {
        if (lats[i] > 90.0 || lats[i] < -90.0) {
            throw std::invalid_argument("latitude out of [90,-90] range");
        }
        if (i > 0 && lats[i] >= lats[i - 1]) {
            throw std::invalid_argument("latitudes must be strictly decreasing");
        }
    }
    const double spacing = 360.0 / static_cast<double>(n_lon);
    for (size_t j = 0; j < lons.size(); ++j) {
        double expect = lons[0] + spacing * static_cast<double>(j);
        if (std::abs(lons[j] - expect) > 1e-9) {
            throw std::invalid_argument("longitudes must be equally spaced with spacing 360/W");
        }
        if (lons[j] < 0.0 || lons[j] >= 360.0) {
            throw std::invalid_argument("longitudes must lie in [0, 360)");
        }
    }
}

std::vector<double> quadrature_weights(const GridSpec& grid) {
    grid.validate();
    const int64_t h = grid.n_lat;
    std::vector<double> w(static_cast<size_t>(h));
    double sum = 0.0;
    for (int64_t i = 0; i < h; ++i) {
        w[static_cast<size_t>(i)] = std::cos(grid.lats[static_cast<size_t>(i)] * kDegToRad);
        sum += w[static_cast<size_t>(i)];
    }
    const double mean = sum / static_cast<double>(h);
    // cos(+-90 deg) only vanishes approximately in floating point; treat a
    // mean below this threshold as the poles-only degenerate case.
    if (mean < 1e-12) {
        throw std::runtime_error("degenerate grid: cosine-latitude sum is zero (poles only)");
    }
    for (double& v : w) v /= mean;
    return w;
}

Tensor sphere_coordinates(const GridSpec& grid) {
    grid.validate();
    const int64_t h = grid.n_lat, w = grid.n_lon;
    Tensor out({3, h, w});
    for (int64_t i = 0; i < h; ++i) {
        const double lat = grid.lats[static_cast<size_t>(i)] * kDegToRad;
        const double clat = std::cos(lat), slat = std::sin(lat);
        for (int64_t j = 0; j < w; ++j) {
            const double lon = grid.lons[static_cast<size_t>(j)] * kDegToRad;
            out.at(0, i, j) = clat * std::cos(lon);
            out.at(1, i, j) = clat * std::sin(lon);
            out.at(2, i, j) = slat;
        }
    }
    return out;
}

Tensor solar_zenith_cos(const GridSpec& grid, int64_t timestamp_utc) {
    grid.validate();
    const int doy = day_of_year(timestamp_utc);
    const double decl = 23.45 * kDegToRad * std::sin(2.0 * M_PI * (284.0 + doy) / 365.0);
    const double sdecl = std::sin(decl), cdecl = std::cos(decl);
    const double hour = utc_hour(timestamp_utc);

    const int64_t h = grid.n_lat, w = grid.n_lon;
    Tensor out({h, w});
    for (int64_t i = 0; i < h; ++i) {
        const double lat = grid.lats[static_cast<size_t>(i)] * kDegToRad;
        const double slat = std::sin(lat), clat = std::cos(lat);
        for (int64_t j = 0; j < w; ++j) {
            const double ha = (15.0 * (hour - 12.0) + grid.lons[static_cast<size_t>(j)]) * kDegToRad;
            double v = slat * sdecl + clat * cdecl * std::cos(ha);
            out.at(i, j) = std::clamp(v, -1.0, 1.0);
        }
    }
    return out;
}

const StaticField* StaticChannelSet::find(const std::string& name) const {
    for (const auto& m : masks) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

StaticField standardize_mask(const std::string& name, const Tensor& raw) {
    if (raw.ndim() != 2) throw std::invalid_argument("mask '" + name + "' must be 2D");
    StaticField f;
    f.name = name;
    f.mean = raw.mean();
    double var = 0.0;
    for (int64_t i = 0; i < raw.numel(); ++i) {
        const double d = raw[i] - f.mean;
        var += d * d;
    }
    f.std = std::sqrt(var / static_cast<double>(raw.numel()));
    if (f.std < 1e-8) {
        log_warning("mask '" + name + "' has near-zero variance; clamping std to 1e-8");
        f.std = 1e-8;
    }
    f.field = raw;
    for (int64_t i = 0; i < f.field.numel(); ++i) f.field[i] = (raw[i] - f.mean) / f.std;
    return f;
}

std::vector<StaticField> load_constant_masks(const GridSpec& grid, const std::string& dir) {
    grid.validate();
    ArrayContainer c = load_container(dir);
    if (c.kind != "static") {
        throw std::runtime_error("container at " + dir + " has kind '" + c.kind +
                                 "', expected 'static'");
    }
    if (c.dims.size() != 3) throw std::runtime_error("static container dims must be [C,H,W]");
    if (c.dims[1] != grid.n_lat || c.dims[2] != grid.n_lon) {
        throw std::runtime_error("mask container shape [" + std::to_string(c.dims[1]) + "," +
                                 std::to_string(c.dims[2]) + "] does not match grid [" +
                                 std::to_string(grid.n_lat) + "," + std::to_string(grid.n_lon) +
                                 "]");
    }
    const int64_t hw = grid.n_lat * grid.n_lon;
    std::vector<StaticField> out;
    for (int64_t ch = 0; ch < c.dims[0]; ++ch) {
        Tensor raw({grid.n_lat, grid.n_lon});
        for (int64_t i = 0; i < hw; ++i) raw[i] = c.data[ch * hw + i];
        out.push_back(standardize_mask(c.channel_names[static_cast<size_t>(ch)], raw));
    }
    return out;
}

// Smooth deterministic field from a handful of seeded longitude/latitude
// modes; the basis is periodic in longitude so masks respect the seam.
static Tensor smooth_random_field(const GridSpec& grid, Rng& rng) {
    Tensor f({grid.n_lat, grid.n_lon});
    const int modes = 6;
    for (int m = 0; m < modes; ++m) {
        const double amp = rng.uniform(0.3, 1.0);
        const int klon = static_cast<int>(rng.uniform_int(4)) + 1;
        const int klat = static_cast<int>(rng.uniform_int(3)) + 1;
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        for (int64_t i = 0; i < grid.n_lat; ++i) {
            const double lat = grid.lats[static_cast<size_t>(i)] * kDegToRad;
            for (int64_t j = 0; j < grid.n_lon; ++j) {
                const double lon = grid.lons[static_cast<size_t>(j)] * kDegToRad;
                f.at(i, j) += amp * std::sin(klon * lon + phase) * std::cos(klat * lat);
            }
        }
    }
    return f;
}

std::vector<StaticField> synthesize_constant_masks(const GridSpec& grid, uint64_t seed) {
    grid.validate();
    Rng rng(seed);
    Rng topo_rng = rng.fork(1), soil_rng = rng.fork(2), sea_rng = rng.fork(3);

    Tensor topo = smooth_random_field(grid, topo_rng);

    Tensor soil_base = smooth_random_field(grid, soil_rng);
    Tensor soil({grid.n_lat, grid.n_lon});
    for (int64_t i = 0; i < soil.numel(); ++i) {
        // Quantize a smooth field into a few discrete soil classes.
        const double s = 1.0 / (1.0 + std::exp(-soil_base[i]));
        soil[i] = std::floor(s * 3.0);
    }

    Tensor sea_base = smooth_random_field(grid, sea_rng);
    Tensor sea({grid.n_lat, grid.n_lon});
    for (int64_t i = 0; i < sea.numel(); ++i) sea[i] = sea_base[i] > 0.0 ? 1.0 : 0.0;

    return {standardize_mask("topography", topo), standardize_mask("soil_type", soil),
            standardize_mask("land_sea", sea)};
}

StaticChannelSet make_static_channels(const GridSpec& grid,
                                      const std::vector<std::string>& mask_names,
                                      const std::string& mask_source, uint64_t seed) {
    StaticChannelSet set;
    set.coords = sphere_coordinates(grid);
    if (mask_names.empty()) return set;

    std::vector<StaticField> all = mask_source.empty()
                                       ? synthesize_constant_masks(grid, seed)
                                       : load_constant_masks(grid, mask_source);
    for (const auto& name : mask_names) {
        auto it = std::find_if(all.begin(), all.end(),
                               [&](const StaticField& f) { return f.name == name; });
        if (it == all.end()) {
            throw std::runtime_error("requested mask '" + name + "' not found in mask source");
        }
        set.masks.push_back(*it);
    }
    return set;
}

}  // namespace wxlab

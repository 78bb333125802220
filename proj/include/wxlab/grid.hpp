// SPDX-License-Identifier: Apache-2.0
//
// Lat-lon grid geometry: quadrature weights for spherical means, unit-sphere
// coordinates, the solar zenith-angle channel, and static constant masks.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wxlab/tensor.hpp"

namespace wxlab {

// A regular latitude-longitude grid. Latitudes run north to south (strictly
// decreasing, degrees in [90, -90]); longitudes are equally spaced east-
// positive starting at 0, spacing 360/W.
struct GridSpec {
    int64_t n_lat = 0;
    int64_t n_lon = 0;
    std::vector<double> lats;
    std::vector<double> lons;

    // Equally spaced grid including both poles (H >= 2); H == 1 uses the
    // equator. Longitudes 0, 360/W, ...
    static GridSpec regular(int64_t n_lat, int64_t n_lon);

    // Throws std::invalid_argument when an invariant is broken (sizes,
    // monotonicity, spacing, range).
    void validate() const;

    bool operator==(const GridSpec& o) const = default;
};

// Row weights w(i) = cos(lat_i) / ((1/H) sum_j cos(lat_j)). The mean weight
// is 1 by construction, so latitude-weighted means stay on the same scale as
// plain means. Throws on a degenerate grid whose cosine sum vanishes (poles
// only).
std::vector<double> quadrature_weights(const GridSpec& grid);

// Unit-sphere Cartesian coordinates, shape [3,H,W], with
// x = cos(lat)cos(lon), y = cos(lat)sin(lon), z = sin(lat).
Tensor sphere_coordinates(const GridSpec& grid);

// Cosine of the solar zenith angle at every grid point, shape [H,W]:
// cos(theta_z) = sin(lat)sin(delta) + cos(lat)cos(delta)cos(h), with the
// day-of-year declination approximation delta = 23.45 deg * sin(2pi(284+N)/365)
// and hour angle h = 15 deg * (UTC hour - 12) + lon. Clipped to [-1, 1].
Tensor solar_zenith_cos(const GridSpec& grid, int64_t timestamp_utc);

// A static per-location input channel, stored standardized together with the
// raw-field stats used to standardize it.
struct StaticField {
    std::string name;
    Tensor field;  // [H,W], (raw - mean) / std
    double mean = 0.0;
    double std = 1.0;
};

// The static channels a model input can carry: raw unit-sphere coordinates
// plus any number of standardized constant masks.
struct StaticChannelSet {
    Tensor coords;  // [3,H,W]
    std::vector<StaticField> masks;

    const StaticField* find(const std::string& name) const;
};

// Standardizes raw masks by their own mean/std; a std below 1e-8 is clamped
// to 1e-8 with a warning so constant fields stay usable.
StaticField standardize_mask(const std::string& name, const Tensor& raw);

// Loads masks from an array container directory (manifest kind "static") and
// standardizes them. Throws when a mask's shape disagrees with the grid.
std::vector<StaticField> load_constant_masks(const GridSpec& grid, const std::string& dir);

// Deterministic synthetic stand-ins for topography, soil_type, and land_sea,
// already standardized.
std::vector<StaticField> synthesize_constant_masks(const GridSpec& grid, uint64_t seed);

// Convenience bundle: coordinates plus the requested masks (loaded from
// `mask_source` when non-empty, synthesized from `seed` otherwise). Unknown
// mask names throw.
StaticChannelSet make_static_channels(const GridSpec& grid,
                                      const std::vector<std::string>& mask_names,
                                      const std::string& mask_source, uint64_t seed);

}  // namespace wxlab

// SPDX-License-Identifier: Apache-2.0
//
// Time-indexed multi-channel field storage: normalization, window assembly
// for multi-step inputs, synthetic data recipes, and the on-disk container.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wxlab/grid.hpp"
#include "wxlab/tensor.hpp"

namespace wxlab {

struct ChannelInfo {
    std::string name;
    double mean = 0.0;
    double std = 1.0;
    std::string group;  // optional: "surface", "pressure", ...
};

struct ChannelSchema {
    std::vector<ChannelInfo> channels;

    int64_t size() const { return static_cast<int64_t>(channels.size()); }
    std::vector<std::string> names() const;
    void validate() const;  // unique names, positive stds, C >= 1
};

// A uniformly sampled series of [C,H,W] fields. Data is stored raw; use
// normalize()/denormalize() with a stats schema to move in and out of
// standardized units.
struct WeatherSeries {
    GridSpec grid;
    ChannelSchema schema;
    std::vector<int64_t> timestamps;  // strictly increasing, uniform spacing
    Tensor data;                      // [T,C,H,W]

    int64_t n_time() const { return static_cast<int64_t>(timestamps.size()); }
    int64_t n_channels() const { return schema.size(); }
    int64_t dt_seconds() const;
    void validate() const;

    Tensor frame(int64_t t) const;  // [C,H,W] copy
};

// One training sample: n_input consecutive steps starting at input_start,
// target at input_start + n_input - 1 + horizon.
struct SampleWindow {
    int64_t input_start = 0;
    int64_t n_input = 1;
    int64_t target = 0;
};

// Every maximal valid window in time order; the count is
// T - (n_input_steps - 1) - horizon_steps. Throws when the series is too
// short for even one window.
std::vector<SampleWindow> make_windows(int64_t n_time, int64_t n_input_steps,
                                       int64_t horizon_steps);

// Per-channel mean/std over timesteps [t_begin, t_end) and all grid points;
// stds below 1e-8 are clamped with a warning. Throws on an empty range.
ChannelSchema compute_normalization(const WeatherSeries& series, int64_t t_begin, int64_t t_end);

// (x - mean) / std per channel, and its inverse.
WeatherSeries normalize(const WeatherSeries& series, const ChannelSchema& stats);
Tensor normalize_frame(const Tensor& field, const ChannelSchema& stats);
Tensor denormalize_frame(const Tensor& field, const ChannelSchema& stats);

// Which auxiliary channels ride along with the n_input_steps dynamic steps.
struct ExtrasConfig {
    int64_t n_input_steps = 1;
    bool zenith = false;
    bool coords = false;
    std::vector<std::string> masks;

    int64_t input_channels(int64_t n_data_channels) const {
        return n_input_steps * n_data_channels + (zenith ? 1 : 0) + (coords ? 3 : 0) +
               static_cast<int64_t>(masks.size());
    }
};

// Stacks the model input: dynamic steps oldest first, then the zenith cosine
// at the last input step's timestamp, then raw unit-sphere coordinates, then
// the requested masks. Throws when zenith is requested without a timestamp
// or a requested mask is missing from `statics`.
Tensor assemble_input(const std::vector<Tensor>& steps, std::optional<int64_t> last_timestamp,
                      const GridSpec& grid, const ExtrasConfig& extras,
                      const StaticChannelSet& statics);

struct SyntheticRecipe {
    std::string kind;  // solid_rotation_advection | diffusive_waves | persistence_plus_noise
    int64_t n_lat = 8;
    int64_t n_lon = 16;
    int64_t n_time = 32;
    int64_t n_channels = 2;
    int64_t dt_seconds = 6 * 3600;
    int64_t start_timestamp = 1577836800;  // 2020-01-01T00:00:00Z
    uint64_t seed = 0;
    int64_t shift_columns = 1;       // solid_rotation_advection: columns per step
    double noise_amplitude = 0.05;   // persistence_plus_noise: per-frame noise std
};

// Deterministic synthetic stand-ins for reanalysis data:
//   solid_rotation_advection : smooth base fields rolled east by
//                              shift_columns per step (exact column copies)
//   diffusive_waves          : decaying traveling waves, closed form per step
//   persistence_plus_noise   : fixed base plus small per-frame noise
WeatherSeries generate_synthetic(const SyntheticRecipe& recipe);

// Container IO (manifest.json + data.f32); see container.hpp for the format.
void save_series(const std::string& dir, const WeatherSeries& series);
WeatherSeries load_series(const std::string& dir);

// Contiguous time ranges [begin, end) for train/val/test by fraction; the
// test split takes the remainder. Each split is nonempty when its fraction
// is positive, or an error is thrown.
struct SplitRanges {
    int64_t train_begin = 0, train_end = 0;
    int64_t val_begin = 0, val_end = 0;
    int64_t test_begin = 0, test_end = 0;
};
SplitRanges make_splits(int64_t n_time, double train_frac, double val_frac);

}  // namespace wxlab

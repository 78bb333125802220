// SPDX-License-Identifier: Apache-2.0

#include "wxlab/dataset.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "wxlab/container.hpp"
#include "wxlab/log.hpp"

namespace wxlab {

std::vector<std::string> ChannelSchema::names() const {
    std::vector<std::string> out;
    out.reserve(channels.size());
    for (const auto& c : channels) out.push_back(c.name);
    return out;
}

void ChannelSchema::validate() const {
    if (channels.empty()) throw std::invalid_argument("channel schema must have C >= 1");
    std::set<std::string> seen;
    for (const auto& c : channels) {
        if (!seen.insert(c.name).second) {
            throw std::invalid_argument("duplicate channel name '" + c.name + "'");
        }
        if (!(c.std > 0.0)) {
            throw std::invalid_argument("channel '" + c.name + "' has non-positive std");
        }
    }
}

int64_t WeatherSeries::dt_seconds() const {
    if (timestamps.size() < 2) throw std::runtime_error("series needs >= 2 timestamps for dt");
    return timestamps[1] - timestamps[0];
}

void WeatherSeries::validate() const {
    grid.validate();
    schema.validate();
    if (data.ndim() != 4) throw std::invalid_argument("series data must be [T,C,H,W]");
    const int64_t t = data.dim(0);
    if (t != n_time()) throw std::invalid_argument("series timestamp count does not match data");
    if (data.dim(1) != schema.size() || data.dim(2) != grid.n_lat || data.dim(3) != grid.n_lon) {
        throw std::invalid_argument("series data shape disagrees with schema or grid");
    }
    if (t >= 2) {
        const int64_t dt = timestamps[1] - timestamps[0];
        if (dt <= 0) throw std::invalid_argument("series timestamps must be strictly increasing");
        for (size_t i = 1; i < timestamps.size(); ++i) {
            if (timestamps[i] - timestamps[i - 1] != dt) {
                throw std::invalid_argument("series timestamps must be uniformly spaced");
            }
        }
    }
    if (!data.all_finite()) throw std::invalid_argument("series data contains non-finite values");
}

Tensor WeatherSeries::frame(int64_t t) const {
    if (t < 0 || t >= n_time()) throw std::out_of_range("series frame index out of range");
    const int64_t chw = data.dim(1) * data.dim(2) * data.dim(3);
    Tensor out({data.dim(1), data.dim(2), data.dim(3)});
    const double* src = data.data() + t * chw;
    for (int64_t i = 0; i < chw; ++i) out[i] = src[i];
    return out;
}

std::vector<SampleWindow> make_windows(int64_t n_time, int64_t n_input_steps,
                                       int64_t horizon_steps) {
    if (n_input_steps < 1) throw std::invalid_argument("n_input_steps must be >= 1");
    if (horizon_steps < 1) throw std::invalid_argument("horizon_steps must be >= 1");
    const int64_t count = n_time - (n_input_steps - 1) - horizon_steps;
    if (count <= 0) {
        throw std::invalid_argument("series length " + std::to_string(n_time) +
                                    " is too short for " + std::to_string(n_input_steps) +
                                    " input steps and horizon " + std::to_string(horizon_steps));
    }
    std::vector<SampleWindow> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t s = 0; s < count; ++s) {
        out.push_back({s, n_input_steps, s + n_input_steps - 1 + horizon_steps});
    }
    return out;
}

ChannelSchema compute_normalization(const WeatherSeries& series, int64_t t_begin, int64_t t_end) {
    series.validate();
    if (t_begin < 0 || t_end > series.n_time() || t_begin >= t_end) {
        throw std::invalid_argument("empty or out-of-range normalization split");
    }
    const int64_t c = series.n_channels();
    const int64_t hw = series.grid.n_lat * series.grid.n_lon;
    const int64_t chw = c * hw;

    ChannelSchema out = series.schema;
    for (int64_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (int64_t t = t_begin; t < t_end; ++t) {
            const double* p = series.data.data() + t * chw + ch * hw;
            for (int64_t i = 0; i < hw; ++i) sum += p[i];
        }
        const double n = static_cast<double>((t_end - t_begin) * hw);
        const double mean = sum / n;
        double var = 0.0;
        for (int64_t t = t_begin; t < t_end; ++t) {
            const double* p = series.data.data() + t * chw + ch * hw;
            for (int64_t i = 0; i < hw; ++i) {
                const double d = p[i] - mean;
                var += d * d;
            }
        }
        double std = std::sqrt(var / n);
        if (std < 1e-8) {
            log_warning("channel '" + out.channels[static_cast<size_t>(ch)].name +
                        "' has near-zero variance; clamping std to 1e-8");
            std = 1e-8;
        }
        out.channels[static_cast<size_t>(ch)].mean = mean;
        out.channels[static_cast<size_t>(ch)].std = std;
    }
    return out;
}

WeatherSeries normalize(const WeatherSeries& series, const ChannelSchema& stats) {
    if (stats.size() != series.n_channels()) {
        throw std::invalid_argument("normalization stats channel count mismatch");
    }
    WeatherSeries out = series;
    out.schema = stats;
    const int64_t hw = series.grid.n_lat * series.grid.n_lon;
    const int64_t c = series.n_channels();
    for (int64_t t = 0; t < series.n_time(); ++t) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const auto& s = stats.channels[static_cast<size_t>(ch)];
            double* p = out.data.data() + (t * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] = (p[i] - s.mean) / s.std;
        }
    }
    return out;
}

Tensor normalize_frame(const Tensor& field, const ChannelSchema& stats) {
    if (field.ndim() != 3 || field.dim(0) != stats.size()) {
        throw std::invalid_argument("normalize_frame expects a [C,H,W] field matching the schema");
    }
    Tensor out = field;
    const int64_t hw = field.dim(1) * field.dim(2);
    for (int64_t ch = 0; ch < stats.size(); ++ch) {
        const auto& s = stats.channels[static_cast<size_t>(ch)];
        for (int64_t i = 0; i < hw; ++i) {
            out[ch * hw + i] = (out[ch * hw + i] - s.mean) / s.std;
        }
    }
    return out;
}

Tensor denormalize_frame(const Tensor& field, const ChannelSchema& stats) {
    if (field.ndim() != 3 || field.dim(0) != stats.size()) {
        throw std::invalid_argument(
            "denormalize_frame expects a [C,H,W] field matching the schema");
    }
    Tensor out = field;
    const int64_t hw = field.dim(1) * field.dim(2);
    for (int64_t ch = 0; ch < stats.size(); ++ch) {
        const auto& s = stats.channels[static_cast<size_t>(ch)];
        for (int64_t i = 0; i < hw; ++i) {
            out[ch * hw + i] = out[ch * hw + i] * s.std + s.mean;
        }
    }
    return out;
}

Tensor assemble_input(const std::vector<Tensor>& steps, std::optional<int64_t> last_timestamp,
                      const GridSpec& grid, const ExtrasConfig& extras,
                      const StaticChannelSet& statics) {
    if (static_cast<int64_t>(steps.size()) != extras.n_input_steps) {
        throw std::invalid_argument("assemble_input got " + std::to_string(steps.size()) +
                                    " steps, config expects " +
                                    std::to_string(extras.n_input_steps));
    }
    if (steps.empty()) throw std::invalid_argument("assemble_input needs at least one step");
    const int64_t c = steps[0].dim(0), h = grid.n_lat, w = grid.n_lon;
    for (const auto& s : steps) {
        if (s.ndim() != 3 || s.dim(0) != c || s.dim(1) != h || s.dim(2) != w) {
            throw std::invalid_argument("assemble_input steps must share one [C,H,W] shape");
        }
    }
    if (extras.zenith && !last_timestamp) {
        throw std::invalid_argument("zenith channel requested but the window has no timestamp");
    }

    const int64_t hw = h * w;
    Tensor out({extras.input_channels(c), h, w});
    int64_t ch_out = 0;
    for (const auto& s : steps) {
        for (int64_t i = 0; i < c * hw; ++i) out[ch_out * hw + i] = s[i];
        ch_out += c;
    }
    if (extras.zenith) {
        Tensor z = solar_zenith_cos(grid, *last_timestamp);
        for (int64_t i = 0; i < hw; ++i) out[ch_out * hw + i] = z[i];
        ++ch_out;
    }
    if (extras.coords) {
        if (statics.coords.numel() != 3 * hw) {
            throw std::invalid_argument("static coordinates missing or mismatched");
        }
        for (int64_t i = 0; i < 3 * hw; ++i) out[ch_out * hw + i] = statics.coords[i];
        ch_out += 3;
    }
    for (const auto& name : extras.masks) {
        const StaticField* f = statics.find(name);
        if (!f) throw std::invalid_argument("mask '" + name + "' not present in static channels");
        for (int64_t i = 0; i < hw; ++i) out[ch_out * hw + i] = f->field[i];
        ++ch_out;
    }
    return out;
}

namespace {

// Smooth per-channel base field: a few random longitude harmonics modulated
// by latitude, periodic in longitude by construction.
Tensor smooth_base(const GridSpec& grid, int64_t n_channels, Rng& rng) {
    const int64_t h = grid.n_lat, w = grid.n_lon;
    Tensor base({n_channels, h, w});
    for (int64_t c = 0; c < n_channels; ++c) {
        Rng crng = rng.fork(static_cast<uint64_t>(c));
        const double offset = crng.uniform(-1.0, 1.0);
        const double scale = crng.uniform(0.5, 2.0);
        for (int64_t i = 0; i < h * w; ++i) base[c * h * w + i] = offset;
        for (int m = 0; m < 5; ++m) {
            const double amp = scale * crng.uniform(0.2, 1.0);
            const int klon = static_cast<int>(crng.uniform_int(3)) + 1;
            const int klat = static_cast<int>(crng.uniform_int(2)) + 1;
            const double phase = crng.uniform(0.0, 2.0 * M_PI);
            for (int64_t i = 0; i < h; ++i) {
                const double lat = grid.lats[static_cast<size_t>(i)] * M_PI / 180.0;
                const double mod = std::cos(static_cast<double>(klat) * lat);
                for (int64_t j = 0; j < w; ++j) {
                    const double lon = grid.lons[static_cast<size_t>(j)] * M_PI / 180.0;
                    base.at(c, i, j) += amp * mod * std::sin(klon * lon + phase);
                }
            }
        }
    }
    return base;
}

ChannelSchema default_schema(int64_t n_channels) {
    ChannelSchema s;
    for (int64_t c = 0; c < n_channels; ++c) {
        s.channels.push_back({"ch" + std::to_string(c), 0.0, 1.0, ""});
    }
    return s;
}

}  // namespace

WeatherSeries generate_synthetic(const SyntheticRecipe& recipe) {
    if (recipe.n_time < 1 || recipe.n_channels < 1) {
        throw std::invalid_argument("synthetic recipe needs n_time >= 1 and n_channels >= 1");
    }
    WeatherSeries series;
    series.grid = GridSpec::regular(recipe.n_lat, recipe.n_lon);
    series.schema = default_schema(recipe.n_channels);
    series.timestamps.resize(static_cast<size_t>(recipe.n_time));
    for (int64_t t = 0; t < recipe.n_time; ++t) {
        series.timestamps[static_cast<size_t>(t)] = recipe.start_timestamp + t * recipe.dt_seconds;
    }

    const int64_t c = recipe.n_channels, h = recipe.n_lat, w = recipe.n_lon;
    const int64_t hw = h * w, chw = c * hw;
    series.data = Tensor({recipe.n_time, c, h, w});
    Rng rng(recipe.seed);

    if (recipe.kind == "solid_rotation_advection") {
        Tensor base = smooth_base(series.grid, c, rng);
        for (int64_t t = 0; t < recipe.n_time; ++t) {
            int64_t shift = (t * recipe.shift_columns) % w;
            if (shift < 0) shift += w;
            for (int64_t ch = 0; ch < c; ++ch) {
                for (int64_t i = 0; i < h; ++i) {
                    for (int64_t j = 0; j < w; ++j) {
                        // Frame t is base rolled east by t*shift_columns;
                        // integer shifts are exact copies.
                        int64_t src = (j - shift) % w;
                        if (src < 0) src += w;
                        series.data.at(t, ch, i, j) = base.at(ch, i, src);
                    }
                }
            }
        }
    } else if (recipe.kind == "diffusive_waves") {
        // Decaying traveling waves with a closed form per step, so any frame
        // can be generated independently and the fields stay smooth.
        const int modes = 4;
        struct Mode {
            double amp, phase, omega, decay;
            int klon, klat;
        };
        for (int64_t ch = 0; ch < c; ++ch) {
            Rng crng = rng.fork(static_cast<uint64_t>(ch));
            std::vector<Mode> ms;
            for (int m = 0; m < modes; ++m) {
                Mode mo;
                mo.amp = crng.uniform(0.3, 1.0);
                mo.phase = crng.uniform(0.0, 2.0 * M_PI);
                mo.klon = static_cast<int>(crng.uniform_int(3)) + 1;
                mo.klat = static_cast<int>(crng.uniform_int(2)) + 1;
                mo.omega = crng.uniform(0.1, 0.5);
                mo.decay = 0.02 * (mo.klon * mo.klon + mo.klat * mo.klat);
                ms.push_back(mo);
            }
            for (int64_t t = 0; t < recipe.n_time; ++t) {
                const double td = static_cast<double>(t);
                for (int64_t i = 0; i < h; ++i) {
                    const double lat = series.grid.lats[static_cast<size_t>(i)] * M_PI / 180.0;
                    for (int64_t j = 0; j < w; ++j) {
                        const double lon = series.grid.lons[static_cast<size_t>(j)] * M_PI / 180.0;
                        double v = 0.0;
                        for (const auto& mo : ms) {
                            v += mo.amp * std::exp(-mo.decay * td) *
                                 std::cos(static_cast<double>(mo.klat) * lat) *
                                 std::sin(mo.klon * lon + mo.omega * td + mo.phase);
                        }
                        series.data.at(t, ch, i, j) = v;
                    }
                }
            }
        }
    } else if (recipe.kind == "persistence_plus_noise") {
        Tensor base = smooth_base(series.grid, c, rng);
        for (int64_t t = 0; t < recipe.n_time; ++t) {
            Rng trng = rng.fork(0x1000u + static_cast<uint64_t>(t));
            for (int64_t i = 0; i < chw; ++i) {
                series.data[t * chw + i] = base[i] + recipe.noise_amplitude * trng.normal();
            }
        }
    } else {
        throw std::invalid_argument("unknown synthetic kind '" + recipe.kind + "'");
    }

    series.validate();
    return series;
}

void save_series(const std::string& dir, const WeatherSeries& series) {
    series.validate();
    ArrayContainer c;
    c.kind = "series";
    c.dims = {series.n_time(), series.n_channels(), series.grid.n_lat, series.grid.n_lon};
    c.channel_names = series.schema.names();
    for (const auto& ch : series.schema.channels) {
        c.channel_mean.push_back(ch.mean);
        c.channel_std.push_back(ch.std);
    }
    c.lats = series.grid.lats;
    c.lons = series.grid.lons;
    c.timestamps = series.timestamps;
    c.data = series.data;
    save_container(dir, c);
}

WeatherSeries load_series(const std::string& dir) {
    ArrayContainer c = load_container(dir);
    if (c.kind != "series") {
        throw std::runtime_error("container at " + dir + " has kind '" + c.kind +
                                 "', expected 'series'");
    }
    if (c.dims.size() != 4) throw std::runtime_error("series container dims must be [T,C,H,W]");

    WeatherSeries s;
    s.grid.n_lat = c.dims[2];
    s.grid.n_lon = c.dims[3];
    s.grid.lats = c.lats;
    s.grid.lons = c.lons;
    for (size_t i = 0; i < c.channel_names.size(); ++i) {
        s.schema.channels.push_back({c.channel_names[i], c.channel_mean[i], c.channel_std[i], ""});
    }
    s.timestamps = c.timestamps;
    s.data = c.data.reshaped(c.dims);
    s.validate();
    return s;
}

SplitRanges make_splits(int64_t n_time, double train_frac, double val_frac) {
    if (train_frac < 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0) {
        throw std::invalid_argument("split fractions must be nonnegative and sum to <= 1");
    }
    SplitRanges r;
    r.train_begin = 0;
    r.train_end = static_cast<int64_t>(std::llround(train_frac * static_cast<double>(n_time)));
    r.val_begin = r.train_end;
    r.val_end = r.val_begin +
                static_cast<int64_t>(std::llround(val_frac * static_cast<double>(n_time)));
    r.test_begin = r.val_end;
    r.test_end = n_time;
    if (train_frac > 0.0 && r.train_end <= r.train_begin) {
        throw std::invalid_argument("train split is empty; series too short");
    }
    if (val_frac > 0.0 && r.val_end <= r.val_begin) {
        throw std::invalid_argument("val split is empty; series too short");
    }
    if (r.test_end <= r.test_begin && train_frac + val_frac < 1.0) {
        throw std::invalid_argument("test split is empty; series too short");
    }
    return r;
}

}  // namespace wxlab

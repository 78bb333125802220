// SPDX-License-Identifier: Apache-2.0
//
// Prediction formulation (direct vs. delta) and autoregressive rollout with
// per-step input re-assembly: the dynamic window slides, the zenith channel
// is recomputed for each new timestamp, and static channels ride along
// unchanged. No noise is ever applied here.

#pragma once

#include <cstdint>
#include <vector>

#include "wxlab/dataset.hpp"
#include "wxlab/grid.hpp"
#include "wxlab/losses.hpp"
#include "wxlab/models.hpp"
#include "wxlab/tensor.hpp"

namespace wxlab {

enum class Formulation { direct, delta };

Formulation parse_formulation(const std::string& name);
std::string formulation_name(Formulation f);

// One model application: direct returns Phi(input); delta returns
// last_state + Phi(input). Throws on channel mismatches against the model.
Tensor forecast_step(Model& model, const Tensor& assembled_input, const Tensor& last_state,
                     Formulation formulation);

struct RolloutResult {
    std::vector<Tensor> states;       // K predicted fields, each [C,H,W]
    std::vector<int64_t> timestamps;  // matching timestamps, t0 + j*dt
    std::vector<Tensor> inputs;       // assembled per-step inputs when kept
    std::vector<MetricReport> reports;  // filled by rollout_metrics when truth exists
};

// K autoregressive steps from an initial window of n states (oldest first,
// normalized units) with their timestamps. dt_seconds is the model's native
// stride in seconds; each prediction advances the clock by that much.
// keep_inputs stores every assembled input for inspection.
RolloutResult rollout(Model& model, const std::vector<Tensor>& init_states,
                      const std::vector<int64_t>& init_timestamps, int64_t k_steps,
                      int64_t dt_seconds, const GridSpec& grid, const ExtrasConfig& extras,
                      const StaticChannelSet& statics, Formulation formulation,
                      bool keep_inputs = false);

// Per-step metrics of a finished rollout against ground truth frames; the
// result states are denormalized with `stats` and compared to the raw truth
// at matching timestamps. Steps with no matching truth frame are skipped.
std::vector<MetricReport> rollout_metrics(const RolloutResult& result,
                                          const WeatherSeries& truth_raw,
                                          const ChannelSchema& stats);

struct HorizonTable {
    std::vector<int64_t> horizons;        // in model steps
    std::vector<MetricReport> reports;    // one per horizon, channel means included
    int64_t n_initial_conditions = 0;
};

// Rolls out from every usable initial condition in [test_begin, test_end),
// evaluates each requested horizon (in model steps of horizon_steps series
// steps each) against ground truth in raw units, and averages the
// per-channel metrics over initial conditions. Throws when the split is
// empty or no initial condition leaves room for the largest horizon.
HorizonTable evaluate_horizons(Model& model, const WeatherSeries& raw_series,
                               const ChannelSchema& stats, int64_t test_begin, int64_t test_end,
                               const std::vector<int64_t>& horizons, int64_t horizon_steps,
                               const ExtrasConfig& extras, const StaticChannelSet& statics,
                               Formulation formulation);

}  // namespace wxlab

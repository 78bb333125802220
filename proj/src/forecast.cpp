// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "wxlab/forecast.hpp"

namespace wxlab {

Formulation parse_formulation(const std::string& name) {
    if (name == "direct") return Formulation::direct;
    if (name == "delta") return Formulation::delta;
    throw std::invalid_argument("unknown formulation '" + name + "' (direct|delta)");
}

std::string formulation_name(Formulation f) {
    return f == Formulation::direct ? "direct" : "delta";
}

Tensor forecast_step(Model& model, const Tensor& assembled_input, const Tensor& last_state,
                     Formulation formulation) {
    if (assembled_input.ndim() != 3 || last_state.ndim() != 3) {
        throw std::invalid_argument("step expects [C,H,W] fields");
    }
    if (assembled_input.dim(0) != model.in_channels()) {
        throw std::invalid_argument("assembled input has " + std::to_string(assembled_input.dim(0)) +
                                    " channels, model expects " +
                                    std::to_string(model.in_channels()));
    }
    if (last_state.dim(0) != model.out_channels()) {
        throw std::invalid_argument("last state has " + std::to_string(last_state.dim(0)) +
                                    " channels, model produces " +
                                    std::to_string(model.out_channels()));
    }
    Tensor next = model.predict(assembled_input);
    if (formulation == Formulation::delta) next += last_state;
    return next;
}

static int64_t advance_time(int64_t t, int64_t dt) {
    int64_t out = 0;
    if (__builtin_add_overflow(t, dt, &out)) {
        throw std::runtime_error("timestamp arithmetic overflow during rollout");
    }
    return out;
}

RolloutResult rollout(Model& model, const std::vector<Tensor>& init_states,
                      const std::vector<int64_t>& init_timestamps, int64_t k_steps,
                      int64_t dt_seconds, const GridSpec& grid, const ExtrasConfig& extras,
                      const StaticChannelSet& statics, Formulation formulation,
                      bool keep_inputs) {
    if (k_steps < 1) throw std::invalid_argument("rollout needs k_steps >= 1");
    if (dt_seconds <= 0) throw std::invalid_argument("rollout needs a positive dt");
    const size_t n = static_cast<size_t>(extras.n_input_steps);
    if (init_states.size() != n || init_timestamps.size() != n) {
        throw std::invalid_argument("initial window must supply exactly " + std::to_string(n) +
                                    " states with timestamps");
    }

    std::vector<Tensor> window = init_states;
    std::vector<int64_t> window_ts = init_timestamps;
    RolloutResult out;
    out.states.reserve(static_cast<size_t>(k_steps));
    out.timestamps.reserve(static_cast<size_t>(k_steps));

    for (int64_t j = 0; j < k_steps; ++j) {
        Tensor input = assemble_input(window, window_ts.back(), grid, extras, statics);
        Tensor next = forecast_step(model, input, window.back(), formulation);
        const int64_t next_ts = advance_time(window_ts.back(), dt_seconds);
        if (keep_inputs) out.inputs.push_back(std::move(input));
        out.states.push_back(next);
        out.timestamps.push_back(next_ts);
        window.erase(window.begin());
        window.push_back(std::move(next));
        window_ts.erase(window_ts.begin());
        window_ts.push_back(next_ts);
    }
    return out;
}

std::vector<MetricReport> rollout_metrics(const RolloutResult& result,
                                          const WeatherSeries& truth_raw,
                                          const ChannelSchema& stats) {
    std::map<int64_t, int64_t> by_time;
    for (int64_t t = 0; t < truth_raw.n_time(); ++t) by_time[truth_raw.timestamps[t]] = t;
    const std::vector<double> weights = quadrature_weights(truth_raw.grid);
    const std::vector<std::string> names = truth_raw.schema.names();

    std::vector<MetricReport> reports;
    for (size_t j = 0; j < result.states.size(); ++j) {
        auto it = by_time.find(result.timestamps[j]);
        if (it == by_time.end()) continue;
        Tensor pred = denormalize_frame(result.states[j], stats);
        reports.push_back(MetricReport::compute(static_cast<int64_t>(j + 1), names, pred,
                                                truth_raw.frame(it->second), weights));
    }
    return reports;
}

HorizonTable evaluate_horizons(Model& model, const WeatherSeries& raw_series,
                               const ChannelSchema& stats, int64_t test_begin, int64_t test_end,
                               const std::vector<int64_t>& horizons, int64_t horizon_steps,
                               const ExtrasConfig& extras, const StaticChannelSet& statics,
                               Formulation formulation) {
    if (test_begin >= test_end) throw std::invalid_argument("empty test split");
    if (horizons.empty()) throw std::invalid_argument("no horizons requested");
    for (int64_t h : horizons) {
        if (h < 1) throw std::invalid_argument("horizons must be >= 1 model steps");
    }
    if (horizon_steps < 1) throw std::invalid_argument("horizon_steps must be >= 1");
    const int64_t max_h = *std::max_element(horizons.begin(), horizons.end());
    const int64_t n = extras.n_input_steps;
    const int64_t c = raw_series.n_channels();
    const int64_t dt_model = horizon_steps * raw_series.dt_seconds();
    const std::vector<double> weights = quadrature_weights(raw_series.grid);
    const std::vector<std::string> names = raw_series.schema.names();

    // Per horizon, per channel accumulators over initial conditions.
    const size_t nh = horizons.size();
    std::vector<std::vector<double>> rmse_sum(nh, std::vector<double>(static_cast<size_t>(c), 0.0));
    std::vector<std::vector<double>> acc_sum(nh, std::vector<double>(static_cast<size_t>(c), 0.0));
    std::vector<std::vector<int64_t>> acc_n(nh, std::vector<int64_t>(static_cast<size_t>(c), 0));

    int64_t n_ics = 0;
    for (int64_t t = test_begin; t < test_end; ++t) {
        if (t - (n - 1) < 0) continue;
        if (t + max_h * horizon_steps >= raw_series.n_time()) continue;
        ++n_ics;

        std::vector<Tensor> init_states;
        std::vector<int64_t> init_ts;
        for (int64_t i = t - (n - 1); i <= t; ++i) {
            init_states.push_back(normalize_frame(raw_series.frame(i), stats));
            init_ts.push_back(raw_series.timestamps[i]);
        }
        RolloutResult rr = rollout(model, init_states, init_ts, max_h, dt_model, raw_series.grid,
                                   extras, statics, formulation);

        for (size_t hi = 0; hi < nh; ++hi) {
            const int64_t h = horizons[hi];
            Tensor pred = denormalize_frame(rr.states[static_cast<size_t>(h - 1)], stats);
            Tensor truth = raw_series.frame(t + h * horizon_steps);
            std::vector<double> rmse = metric_rmse(pred, truth, weights);
            std::vector<bool> defined;
            std::vector<double> acc = metric_acc(pred, truth, weights, &defined);
            for (int64_t ch = 0; ch < c; ++ch) {
                rmse_sum[hi][static_cast<size_t>(ch)] += rmse[static_cast<size_t>(ch)];
                if (defined[static_cast<size_t>(ch)]) {
                    acc_sum[hi][static_cast<size_t>(ch)] += acc[static_cast<size_t>(ch)];
                    acc_n[hi][static_cast<size_t>(ch)] += 1;
                }
            }
        }
    }
    if (n_ics == 0) {
        throw std::invalid_argument(
            "no initial condition in the test split leaves room for horizon " +
            std::to_string(max_h));
    }

    HorizonTable table;
    table.horizons = horizons;
    table.n_initial_conditions = n_ics;
    for (size_t hi = 0; hi < nh; ++hi) {
        MetricReport rep;
        rep.horizon_steps = horizons[hi];
        rep.channel_names = names;
        for (int64_t ch = 0; ch < c; ++ch) {
            rep.rmse.push_back(rmse_sum[hi][static_cast<size_t>(ch)] /
                               static_cast<double>(n_ics));
            const int64_t k = acc_n[hi][static_cast<size_t>(ch)];
            rep.acc_defined.push_back(k > 0);
            rep.acc.push_back(k > 0 ? acc_sum[hi][static_cast<size_t>(ch)] /
                                          static_cast<double>(k)
                                    : std::nan(""));
        }
        rep.refresh_means();
        table.reports.push_back(std::move(rep));
    }
    return table;
}

}  // namespace wxlab

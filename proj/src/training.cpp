// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wxlab/training.hpp"

namespace wxlab {

void OptimConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be nonnegative");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

double cosine_lr(int64_t step, int64_t total_steps, double lr0) {
    if (total_steps == 0) throw std::invalid_argument("cosine schedule needs total_steps > 0");
    if (step < 0 || step > total_steps) {
        throw std::invalid_argument("cosine schedule step outside [0, total_steps]");
    }
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * lr0 * (1.0 + std::cos(M_PI * frac));
}

AdamW::AdamW(Model& model, double weight_decay) : model_(model), wd_(weight_decay) {
    for (const auto& p : model_.parameters()) {
        m_.emplace_back(p.var->value.shape());
        v_.emplace_back(p.var->value.shape());
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto& params = model_.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].var->value;
        const Tensor& g = params[i].var->grad;
        const bool has_grad = !g.empty();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t e = 0; e < p.numel(); ++e) {
            p[e] *= (1.0 - lr * wd_);
            const double ge = has_grad ? g[e] : 0.0;
            m[e] = beta1_ * m[e] + (1.0 - beta1_) * ge;
            v[e] = beta2_ * v[e] + (1.0 - beta2_) * ge * ge;
            const double mhat = m[e] / bc1;
            const double vhat = v[e] / bc2;
            p[e] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

std::vector<double> loss_row_weights(const LossConfig& cfg, const GridSpec& grid) {
    if (cfg.kind == LossKind::geo_mse || cfg.kind == LossKind::geo_l1) {
        return quadrature_weights(grid);
    }
    return {};
}

std::vector<SampleWindow> windows_in_range(const WeatherSeries& series, int64_t n_input,
                                           int64_t horizon, int64_t begin, int64_t end) {
    std::vector<SampleWindow> all = make_windows(series.n_time(), n_input, horizon);
    std::vector<SampleWindow> out;
    for (const auto& w : all) {
        if (w.input_start >= begin && w.target < end) out.push_back(w);
    }
    return out;
}

void shuffle_order(std::vector<size_t>& order, Rng& rng) {
    for (size_t i = order.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)));
        std::swap(order[i - 1], order[j]);
    }
}

// Copies a [C,H,W] field into slot n of a [N,C,H,W] batch.
void place_in_batch(Tensor& batch, int64_t n, const Tensor& field) {
    const int64_t chw = field.numel();
    std::copy(field.data(), field.data() + chw, batch.data() + n * chw);
}

[[noreturn]] void report_divergence(const Model& model, double loss, int64_t epoch, int64_t step) {
    double pmax = 0.0, gmax = 0.0;
    for (const auto& p : model.parameters()) {
        pmax = std::max(pmax, p.var->value.max_abs());
        if (!p.var->grad.empty()) gmax = std::max(gmax, p.var->grad.max_abs());
    }
    std::ostringstream os;
    os << "training diverged: loss=" << loss << " at epoch " << epoch << " step " << step
       << " (max |param|=" << pmax << ", max |grad| at last backward=" << gmax << ")";
    throw TrainingDivergence(os.str());
}

// Dynamic input frames for one window, oldest first, optionally perturbed.
std::vector<Tensor> window_frames(const WeatherSeries& series, const SampleWindow& w,
                                  const NoiseConfig& noise, Rng* noise_rng) {
    std::vector<Tensor> frames;
    for (int64_t i = 0; i < w.n_input; ++i) {
        Tensor f = series.frame(w.input_start + i);
        if (noise_rng != nullptr && noise.kind != NoiseKind::none) {
            Rng frame_rng = noise_rng->fork(static_cast<uint64_t>(i));
            f = apply_noise(f, noise, frame_rng);
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

double validation_mse(Model& model, const WeatherSeries& series, const SplitRanges& splits,
                      const TrainTask& task, const StaticChannelSet& statics) {
    const auto windows = windows_in_range(series, task.extras.n_input_steps, task.horizon_steps,
                                          splits.val_begin, splits.val_end);
    if (windows.empty()) return std::nan("");
    ad::NoGradGuard ng;
    double acc = 0.0;
    for (const auto& w : windows) {
        std::vector<Tensor> frames = window_frames(series, w, NoiseConfig{}, nullptr);
        const int64_t last = w.input_start + w.n_input - 1;
        Tensor input = assemble_input(frames, series.timestamps[last], series.grid, task.extras,
                                      statics);
        Tensor pred = forecast_step(model, input, frames.back(), task.formulation);
        Tensor truth = series.frame(w.target);
        double se = 0.0;
        for (int64_t e = 0; e < pred.numel(); ++e) {
            const double d = pred[e] - truth[e];
            se += d * d;
        }
        acc += se / static_cast<double>(pred.numel());
    }
    return acc / static_cast<double>(windows.size());
}

}  // namespace

TrainResult train(Model& model, const WeatherSeries& norm_series, const SplitRanges& splits,
                  const TrainTask& task, const OptimConfig& optim,
                  const StaticChannelSet& statics) {
    optim.validate();
    task.loss.validate();
    task.noise.validate();
    const auto windows = windows_in_range(norm_series, task.extras.n_input_steps,
                                          task.horizon_steps, splits.train_begin,
                                          splits.train_end);
    if (windows.empty()) throw std::invalid_argument("train split has no usable windows");

    const int64_t c = norm_series.n_channels();
    const int64_t h = norm_series.grid.n_lat, wd = norm_series.grid.n_lon;
    const std::vector<double> rw = loss_row_weights(task.loss, norm_series.grid);
    const int64_t n_windows = static_cast<int64_t>(windows.size());
    const int64_t spe = (n_windows + optim.batch_size - 1) / optim.batch_size;
    const int64_t total_steps = optim.epochs * spe;

    AdamW opt(model, optim.weight_decay);
    Rng order_rng = Rng(optim.seed).fork(0xA11);
    Rng noise_root = Rng(task.noise.seed).fork(0xB22);

    TrainResult result;
    result.steps_per_epoch = spe;
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < optim.epochs; ++epoch) {
        shuffle_order(order, order_rng);
        for (int64_t b = 0; b < spe; ++b) {
            const int64_t lo = b * optim.batch_size;
            const int64_t hi = std::min(lo + optim.batch_size, n_windows);
            const int64_t nb = hi - lo;
            Tensor inputs({nb, task.extras.input_channels(c), h, wd});
            Tensor targets({nb, c, h, wd});
            Tensor lasts({nb, c, h, wd});
            for (int64_t s = 0; s < nb; ++s) {
                const SampleWindow& w = windows[order[static_cast<size_t>(lo + s)]];
                Rng sample_rng = noise_root.fork(static_cast<uint64_t>(epoch) << 32 |
                                                 static_cast<uint64_t>(order[static_cast<size_t>(lo + s)]));
                std::vector<Tensor> frames = window_frames(norm_series, w, task.noise, &sample_rng);
                const int64_t last = w.input_start + w.n_input - 1;
                place_in_batch(inputs, s,
                               assemble_input(frames, norm_series.timestamps[last],
                                              norm_series.grid, task.extras, statics));
                place_in_batch(lasts, s, frames.back());
                place_in_batch(targets, s, norm_series.frame(w.target));
            }

            ad::Var phi = model.forward(ad::constant(std::move(inputs)));
            ad::Var state = task.formulation == Formulation::delta
                                ? ad::add(phi, ad::constant(std::move(lasts)))
                                : phi;
            ad::Var loss = ad::loss_op(state, targets, task.loss, rw);
            const double lv = loss->value[0];
            if (!std::isfinite(lv)) report_divergence(model, lv, epoch, global_step);
            result.loss_history.push_back(lv);

            model.zero_grad();
            ad::backward(loss);
            opt.step(cosine_lr(global_step, total_steps, optim.lr));
            ++global_step;
        }
        result.val_mse.push_back(validation_mse(model, norm_series, splits, task, statics));
    }
    return result;
}

PretrainObjective parse_pretrain_objective(const std::string& name) {
    if (name == "supervised") return PretrainObjective::supervised;
    if (name == "autoencoder") return PretrainObjective::autoencoder;
    if (name == "masked_autoencoder") return PretrainObjective::masked_autoencoder;
    if (name == "denoising_autoencoder") return PretrainObjective::denoising_autoencoder;
    throw std::invalid_argument("unknown pretraining objective '" + name + "'");
}

std::string pretrain_objective_name(PretrainObjective o) {
    switch (o) {
        case PretrainObjective::supervised: return "supervised";
        case PretrainObjective::autoencoder: return "autoencoder";
        case PretrainObjective::masked_autoencoder: return "masked_autoencoder";
        case PretrainObjective::denoising_autoencoder: return "denoising_autoencoder";
    }
    throw std::invalid_argument("bad objective enum");
}

void PretrainConfig::validate() const {
    if (!(mask_ratio > 0.0) || !(mask_ratio < 1.0)) {
        throw std::invalid_argument("mask_ratio must lie in (0,1)");
    }
    if (dae_noise_std < 0.0) throw std::invalid_argument("dae_noise_std must be nonnegative");
}

void set_model_skips(Model& model, bool on) {
    if (auto* u = dynamic_cast<UNet*>(&model)) {
        u->set_use_skips(on);
    } else if (auto* g = dynamic_cast<GraphUNet*>(&model)) {
        g->core().set_use_skips(on);
    }
}

void reinit_model_skips(Model& model, Rng& rng) {
    if (auto* u = dynamic_cast<UNet*>(&model)) {
        u->reinit_skip_parameters(rng);
    } else if (auto* g = dynamic_cast<GraphUNet*>(&model)) {
        for (const auto& name : g->core().skip_param_names()) {
            model.reinit_parameter("core." + name, rng);
        }
    }
}

TrainResult pretrain(Model& model, const WeatherSeries& norm_series, const SplitRanges& splits,
                     const TrainTask& task, const PretrainConfig& cfg, const OptimConfig& optim,
                     const StaticChannelSet& statics) {
    cfg.validate();
    if (cfg.objective == PretrainObjective::supervised) {
        return train(model, norm_series, splits, task, optim, statics);
    }
    optim.validate();
    task.loss.validate();

    const int64_t c = norm_series.n_channels();
    const int64_t n_masked = static_cast<int64_t>(std::floor(cfg.mask_ratio * static_cast<double>(c)));
    if (cfg.objective == PretrainObjective::masked_autoencoder && n_masked == 0) {
        throw std::invalid_argument("mask_ratio " + std::to_string(cfg.mask_ratio) + " masks zero of " +
                                    std::to_string(c) + " channels");
    }
    if (cfg.objective == PretrainObjective::autoencoder) set_model_skips(model, false);

    const auto windows = windows_in_range(norm_series, task.extras.n_input_steps,
                                          task.horizon_steps, splits.train_begin,
                                          splits.train_end);
    if (windows.empty()) throw std::invalid_argument("train split has no usable windows");

    const int64_t h = norm_series.grid.n_lat, wd = norm_series.grid.n_lon;
    const std::vector<double> rw = loss_row_weights(task.loss, norm_series.grid);
    const int64_t n_windows = static_cast<int64_t>(windows.size());
    const int64_t spe = (n_windows + optim.batch_size - 1) / optim.batch_size;
    const int64_t total_steps = optim.epochs * spe;

    AdamW opt(model, optim.weight_decay);
    Rng order_rng = Rng(optim.seed).fork(0xA11);
    Rng corrupt_root = Rng(optim.seed).fork(0xC33);

    TrainResult result;
    result.steps_per_epoch = spe;
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < optim.epochs; ++epoch) {
        shuffle_order(order, order_rng);
        for (int64_t b = 0; b < spe; ++b) {
            const int64_t lo = b * optim.batch_size;
            const int64_t hi = std::min(lo + optim.batch_size, n_windows);
            const int64_t nb = hi - lo;
            Tensor inputs({nb, task.extras.input_channels(c), h, wd});
            Tensor targets({nb, c, h, wd});
            Tensor channel_mask({nb, c});
            for (int64_t s = 0; s < nb; ++s) {
                const SampleWindow& w = windows[order[static_cast<size_t>(lo + s)]];
                Rng sample_rng = corrupt_root.fork(static_cast<uint64_t>(epoch) << 32 |
                                                   static_cast<uint64_t>(order[static_cast<size_t>(lo + s)]));
                std::vector<Tensor> frames = window_frames(norm_series, w, NoiseConfig{}, nullptr);
                place_in_batch(targets, s, frames.back());

                if (cfg.objective == PretrainObjective::denoising_autoencoder) {
                    for (size_t i = 0; i < frames.size(); ++i) {
                        Rng frame_rng = sample_rng.fork(static_cast<uint64_t>(i));
                        frames[i] = gaussian_perturb(frames[i], cfg.dae_noise_std, frame_rng);
                    }
                } else if (cfg.objective == PretrainObjective::masked_autoencoder) {
                    // Partial Fisher-Yates draw of n_masked distinct channels.
                    std::vector<int64_t> chans(static_cast<size_t>(c));
                    for (int64_t i = 0; i < c; ++i) chans[static_cast<size_t>(i)] = i;
                    for (int64_t i = 0; i < n_masked; ++i) {
                        const int64_t j = i + sample_rng.uniform_int(c - i);
                        std::swap(chans[static_cast<size_t>(i)], chans[static_cast<size_t>(j)]);
                    }
                    for (int64_t i = 0; i < n_masked; ++i) {
                        const int64_t ch = chans[static_cast<size_t>(i)];
                        channel_mask.at(s, ch) = 1.0;
                        for (auto& f : frames) {
                            double* row = f.data() + ch * h * wd;
                            std::fill(row, row + h * wd, 0.0);
                        }
                    }
                }

                const int64_t last = w.input_start + w.n_input - 1;
                place_in_batch(inputs, s,
                               assemble_input(frames, norm_series.timestamps[last],
                                              norm_series.grid, task.extras, statics));
            }

            ad::Var pred = model.forward(ad::constant(std::move(inputs)));
            ad::Var loss = cfg.objective == PretrainObjective::masked_autoencoder
                               ? ad::masked_channel_loss(pred, targets, task.loss, channel_mask)
                               : ad::loss_op(pred, targets, task.loss, rw);
            const double lv = loss->value[0];
            if (!std::isfinite(lv)) report_divergence(model, lv, epoch, global_step);
            result.loss_history.push_back(lv);

            model.zero_grad();
            ad::backward(loss);
            opt.step(cosine_lr(global_step, total_steps, optim.lr));
            ++global_step;
        }

        // Clean reconstruction error on the val range, corruption off.
        const auto vws = windows_in_range(norm_series, task.extras.n_input_steps,
                                          task.horizon_steps, splits.val_begin, splits.val_end);
        if (vws.empty()) {
            result.val_mse.push_back(std::nan(""));
        } else {
            ad::NoGradGuard ng;
            double acc = 0.0;
            for (const auto& w : vws) {
                std::vector<Tensor> frames = window_frames(norm_series, w, NoiseConfig{}, nullptr);
                const int64_t last = w.input_start + w.n_input - 1;
                Tensor input = assemble_input(frames, norm_series.timestamps[last],
                                              norm_series.grid, task.extras, statics);
                Tensor pred = model.predict(input);
                double se = 0.0;
                for (int64_t e = 0; e < pred.numel(); ++e) {
                    const double d = pred[e] - frames.back()[e];
                    se += d * d;
                }
                acc += se / static_cast<double>(pred.numel());
            }
            result.val_mse.push_back(acc / static_cast<double>(vws.size()));
        }
    }
    return result;
}

void FinetuneConfig::validate() const {
    if (stage_steps.empty()) throw std::invalid_argument("finetune needs at least one stage");
    for (size_t i = 0; i < stage_steps.size(); ++i) {
        if (stage_steps[i] < 1) throw std::invalid_argument("stage steps must be >= 1");
        if (i > 0 && stage_steps[i] < stage_steps[i - 1]) {
            throw std::invalid_argument("stage steps must be nondecreasing");
        }
    }
    if (supervision != "last_step" && supervision != "intermediate") {
        throw std::invalid_argument("supervision must be last_step or intermediate");
    }
    if (!(discount > 0.0) || discount > 1.0) {
        throw std::invalid_argument("discount must lie in (0,1]");
    }
    if (scheduled_sampling && supervision != "intermediate") {
        throw std::invalid_argument("scheduled sampling requires intermediate supervision");
    }
    if (epochs_per_stage < 1) throw std::invalid_argument("epochs_per_stage must be >= 1");
}

std::vector<double> supervision_weights(int64_t k, double discount) {
    if (k < 1) throw std::invalid_argument("need k >= 1 supervision weights");
    std::vector<double> w;
    w.reserve(static_cast<size_t>(k));
    double cur = 1.0;
    for (int64_t i = 0; i < k; ++i) {
        w.push_back(cur);
        cur *= discount;
    }
    return w;
}

double scheduled_sampling_weight(int64_t epoch, int64_t total_epochs) {
    if (total_epochs < 1 || epoch < 1 || epoch > total_epochs) {
        throw std::invalid_argument("scheduled sampling epoch outside 1..total_epochs");
    }
    return static_cast<double>(epoch) / static_cast<double>(total_epochs);
}

namespace {

// Multi-step windows for one stage: n_input consecutive frames ending at t,
// then k targets spaced horizon apart, all inside [begin, end).
struct StageWindow {
    int64_t last_input = 0;
};

std::vector<StageWindow> stage_windows(int64_t n_input, int64_t horizon, int64_t k, int64_t begin,
                                       int64_t end) {
    std::vector<StageWindow> out;
    for (int64_t t = begin + n_input - 1; t < end; ++t) {
        if (t - n_input + 1 < begin) continue;
        if (t + k * horizon >= end) continue;
        out.push_back({t});
    }
    return out;
}

// Batched zenith field [N,1,H,W] for per-sample timestamps.
Tensor batch_zenith(const GridSpec& grid, const std::vector<int64_t>& ts) {
    const int64_t n = static_cast<int64_t>(ts.size());
    Tensor out({n, 1, grid.n_lat, grid.n_lon});
    for (int64_t s = 0; s < n; ++s) {
        Tensor z = solar_zenith_cos(grid, ts[static_cast<size_t>(s)]);
        std::copy(z.data(), z.data() + z.numel(), out.data() + s * z.numel());
    }
    return out;
}

// Tiles a [C,H,W] static field across the batch dim.
Tensor batch_tile(const Tensor& field, int64_t n) {
    std::vector<int64_t> shape = field.shape();
    shape.insert(shape.begin(), n);
    Tensor out(shape);
    for (int64_t s = 0; s < n; ++s) {
        std::copy(field.data(), field.data() + field.numel(), out.data() + s * field.numel());
    }
    return out;
}

// Graph-side analogue of assemble_input for a batch: dynamic window vars
// oldest first, then zenith/coords/masks constants.
ad::Var assemble_batch_input(const std::vector<ad::Var>& window, const std::vector<int64_t>& ts,
                             const GridSpec& grid, const ExtrasConfig& extras,
                             const StaticChannelSet& statics) {
    std::vector<ad::Var> parts = window;
    const int64_t n = window.front()->value.dim(0);
    if (extras.zenith) parts.push_back(ad::constant(batch_zenith(grid, ts)));
    if (extras.coords) parts.push_back(ad::constant(batch_tile(statics.coords, n)));
    for (const auto& name : extras.masks) {
        const StaticField* f = statics.find(name);
        if (f == nullptr) throw std::invalid_argument("requested mask '" + name + "' is missing");
        Tensor m = f->field.reshaped({1, f->field.dim(0), f->field.dim(1)});
        parts.push_back(ad::constant(batch_tile(m, n)));
    }
    return ad::concat_channels(parts);
}

}  // namespace

TrainResult finetune_multistep(Model& model, const WeatherSeries& norm_series,
                               const SplitRanges& splits, const TrainTask& task,
                               const FinetuneConfig& cfg, const OptimConfig& optim,
                               const StaticChannelSet& statics) {
    cfg.validate();
    optim.validate();
    task.loss.validate();
    task.noise.validate();

    const int64_t n = task.extras.n_input_steps;
    const int64_t c = norm_series.n_channels();
    const int64_t h = norm_series.grid.n_lat, wd = norm_series.grid.n_lon;
    const int64_t dt = norm_series.dt_seconds();
    const std::vector<double> rw = loss_row_weights(task.loss, norm_series.grid);
    const bool intermediate = cfg.supervision == "intermediate";

    TrainResult result;
    Rng order_rng = Rng(optim.seed).fork(0xA12);
    Rng noise_root = Rng(task.noise.seed).fork(0xB23);

    for (size_t stage = 0; stage < cfg.stage_steps.size(); ++stage) {
        const int64_t k = cfg.stage_steps[stage];
        const auto windows = stage_windows(n, task.horizon_steps, k,
                                           splits.train_begin, splits.train_end);
        if (windows.empty()) {
            throw std::invalid_argument("stage of " + std::to_string(k) +
                                        " steps exceeds the available series length");
        }
        const std::vector<double> weights = supervision_weights(k, cfg.discount);
        const int64_t n_windows = static_cast<int64_t>(windows.size());
        const int64_t spe = (n_windows + optim.batch_size - 1) / optim.batch_size;
        const int64_t total_steps = cfg.epochs_per_stage * spe;
        result.steps_per_epoch = spe;

        // Fresh optimizer state and schedule per stage.
        AdamW opt(model, optim.weight_decay);
        std::vector<size_t> order(windows.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;

        int64_t stage_step = 0;
        for (int64_t epoch = 1; epoch <= cfg.epochs_per_stage; ++epoch) {
            const double p_pred = cfg.scheduled_sampling
                                      ? scheduled_sampling_weight(epoch, cfg.epochs_per_stage)
                                      : 1.0;
            shuffle_order(order, order_rng);
            for (int64_t b = 0; b < spe; ++b) {
                const int64_t lo = b * optim.batch_size;
                const int64_t hi = std::min(lo + optim.batch_size, n_windows);
                const int64_t nb = hi - lo;

                // Initial window vars and per-sample clocks.
                std::vector<ad::Var> window;
                std::vector<int64_t> ts(static_cast<size_t>(nb));
                for (int64_t i = 0; i < n; ++i) {
                    Tensor slab({nb, c, h, wd});
                    for (int64_t s = 0; s < nb; ++s) {
                        const int64_t t = windows[order[static_cast<size_t>(lo + s)]].last_input;
                        Tensor f = norm_series.frame(t - n + 1 + i);
                        if (task.noise.kind != NoiseKind::none) {
                            Rng fr = noise_root
                                         .fork(static_cast<uint64_t>(stage) << 48 |
                                               static_cast<uint64_t>(epoch) << 32 |
                                               static_cast<uint64_t>(order[static_cast<size_t>(lo + s)]))
                                         .fork(static_cast<uint64_t>(i));
                            f = apply_noise(f, task.noise, fr);
                        }
                        place_in_batch(slab, s, f);
                        if (i == n - 1) {
                            ts[static_cast<size_t>(s)] = norm_series.timestamps[t];
                        }
                    }
                    window.push_back(ad::constant(std::move(slab)));
                }

                std::vector<ad::Var> step_losses;
                for (int64_t j = 1; j <= k; ++j) {
                    ad::Var input = assemble_batch_input(window, ts, norm_series.grid,
                                                         task.extras, statics);
                    ad::Var phi = model.forward(input);
                    ad::Var state = task.formulation == Formulation::delta
                                        ? ad::add(phi, window.back())
                                        : phi;

                    Tensor target({nb, c, h, wd});
                    for (int64_t s = 0; s < nb; ++s) {
                        const int64_t t = windows[order[static_cast<size_t>(lo + s)]].last_input;
                        place_in_batch(target, s, norm_series.frame(t + j * task.horizon_steps));
                    }
                    if (intermediate) {
                        step_losses.push_back(ad::loss_op(state, target, task.loss, rw));
                    } else if (j == k) {
                        step_losses.push_back(ad::loss_op(state, target, task.loss, rw));
                    }

                    ad::Var feedback = state;
                    if (cfg.scheduled_sampling && j < k) {
                        feedback = ad::add_scaled(state, ad::constant(std::move(target)), p_pred,
                                                  1.0 - p_pred);
                    }
                    window.erase(window.begin());
                    window.push_back(feedback);
                    for (auto& t : ts) t += task.horizon_steps * dt;
                }

                ad::Var loss = intermediate ? ad::weighted_sum(step_losses, weights)
                                            : step_losses.back();
                const double lv = loss->value[0];
                if (!std::isfinite(lv)) report_divergence(model, lv, epoch, stage_step);
                result.loss_history.push_back(lv);

                model.zero_grad();
                ad::backward(loss);
                opt.step(cosine_lr(stage_step, total_steps, optim.lr));
                ++stage_step;
            }

            // Per-epoch validation: k-step rollout MSE of the final state.
            const auto vws = stage_windows(n, task.horizon_steps, k,
                                           splits.val_begin, splits.val_end);
            if (vws.empty()) {
                result.val_mse.push_back(std::nan(""));
            } else {
                ad::NoGradGuard ng;
                double acc = 0.0;
                for (const auto& w : vws) {
                    std::vector<Tensor> init;
                    std::vector<int64_t> its;
                    for (int64_t i = w.last_input - n + 1; i <= w.last_input; ++i) {
                        init.push_back(norm_series.frame(i));
                        its.push_back(norm_series.timestamps[i]);
                    }
                    RolloutResult rr = rollout(model, init, its, k, task.horizon_steps * dt,
                                               norm_series.grid, task.extras, statics,
                                               task.formulation);
                    Tensor truth = norm_series.frame(w.last_input + k * task.horizon_steps);
                    const Tensor& pred = rr.states.back();
                    double se = 0.0;
                    for (int64_t e = 0; e < pred.numel(); ++e) {
                        const double d = pred[e] - truth[e];
                        se += d * d;
                    }
                    acc += se / static_cast<double>(pred.numel());
                }
                result.val_mse.push_back(acc / static_cast<double>(vws.size()));
            }
        }
    }
    return result;
}

static const char kCheckpointMagic[8] = {'W', 'X', 'C', 'K', 'P', 'T', '0', '1'};

void save_checkpoint(const std::string& path, const Model& model, const std::string& meta_json) {
    nlohmann::json meta;
    if (meta_json.empty()) {
        meta = nlohmann::json::object();
    } else {
        meta = nlohmann::json::parse(meta_json);
        if (!meta.is_object()) throw std::invalid_argument("checkpoint metadata must be a JSON object");
    }
    nlohmann::json header;
    header["meta"] = meta;
    header["params"] = nlohmann::json::array();
    for (const auto& p : model.parameters()) {
        header["params"].push_back({{"name", p.name}, {"shape", p.var->value.shape()}});
    }
    const std::string htext = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    const uint64_t hlen = htext.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& p : model.parameters()) {
        const Tensor& t = p.var->value;
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
    }
    if (!os) throw std::runtime_error("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    }
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!is || hlen > (1ull << 30)) throw std::runtime_error("corrupt checkpoint header: " + path);
    std::string htext(hlen, '\0');
    is.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("corrupt checkpoint header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt checkpoint header JSON: " + std::string(e.what()));
    }
    if (!header.contains("params") || !header["params"].is_array()) {
        throw std::runtime_error("checkpoint header lacks a parameter table: " + path);
    }

    Checkpoint ckpt;
    ckpt.meta_json = header.value("meta", nlohmann::json::object()).dump();
    for (const auto& e : header["params"]) {
        CheckpointParam p;
        p.name = e.at("name").get<std::string>();
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        int64_t numel = 1;
        for (int64_t d : shape) {
            if (d < 1) throw std::runtime_error("corrupt checkpoint shape for " + p.name);
            numel *= d;
        }
        p.value = Tensor(shape);
        is.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(numel)));
        if (!is) throw std::runtime_error("checkpoint truncated in parameter " + p.name);
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

std::string LoadReport::to_text() const {
    std::ostringstream os;
    auto section = [&os](const char* title, const std::vector<std::string>& names) {
        os << title << " (" << names.size() << ")\n";
        for (const auto& n : names) os << "  " << n << "\n";
    };
    section("loaded", loaded);
    section("reinitialized", reinitialized);
    section("skipped", skipped);
    section("unused", unused);
    return os.str();
}

LoadReport load_partial_checkpoint(Model& model, const Checkpoint& ckpt, bool reinit_heads,
                                   Rng& rng) {
    std::map<std::string, const CheckpointParam*> by_name;
    for (const auto& p : ckpt.params) by_name[p.name] = &p;
    const auto head_list = model.head_param_names();
    const std::set<std::string> heads(head_list.begin(), head_list.end());

    // Plan first so a useless checkpoint leaves the model untouched.
    LoadReport report;
    std::vector<std::pair<ad::Var, const Tensor*>> copies;
    std::vector<std::string> reinits;
    for (const auto& entry : model.parameters()) {
        const bool is_head = heads.count(entry.name) > 0;
        auto it = by_name.find(entry.name);
        const bool shape_ok =
            it != by_name.end() && it->second->value.shape() == entry.var->value.shape();
        if (is_head && (reinit_heads || !shape_ok)) {
            reinits.push_back(entry.name);
            report.reinitialized.push_back(entry.name);
        } else if (shape_ok) {
            copies.emplace_back(entry.var, &it->second->value);
            report.loaded.push_back(entry.name);
        } else {
            report.skipped.push_back(entry.name);
        }
    }
    for (const auto& p : ckpt.params) {
        if (!model.has_param(p.name)) report.unused.push_back(p.name);
    }
    if (report.loaded.empty()) {
        throw std::runtime_error(
            "checkpoint shares no loadable parameters with this model (wrong checkpoint?)");
    }

    for (auto& [var, src] : copies) var->value = *src;
    for (const auto& name : reinits) model.reinit_parameter(name, rng);
    return report;
}

}  // namespace wxlab

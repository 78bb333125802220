// SPDX-License-Identifier: Apache-2.0
//
// Optimization: decoupled-weight-decay Adam with a cosine schedule, the
// single-step training loop, reconstruction pretraining objectives,
// multi-step fine-tuning (discounted supervision, scheduled sampling), and
// checkpoint save/load including partial loads across head shapes.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wxlab/dataset.hpp"
#include "wxlab/forecast.hpp"
#include "wxlab/losses.hpp"
#include "wxlab/models.hpp"
#include "wxlab/noise.hpp"
#include "wxlab/tensor.hpp"

namespace wxlab {

struct OptimConfig {
    double lr = 0.001;
    double weight_decay = 0.0001;  // decoupled from the gradient
    int64_t epochs = 10;
    int64_t batch_size = 4;
    uint64_t seed = 0;

    void validate() const;
};

// Half-cosine from lr0 at step 0 to exactly 0 at total_steps.
double cosine_lr(int64_t step, int64_t total_steps, double lr0);

// Adam with decoupled weight decay: the decay multiplies parameters by
// (1 - lr*wd) before the moment update, so a zero gradient still shrinks
// them by exactly that factor.
class AdamW {
public:
    AdamW(Model& model, double weight_decay);

    void step(double lr);
    int64_t steps_taken() const { return t_; }

private:
    Model& model_;
    double wd_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// What one supervised step looks like: formulation, loss, input extras,
// input perturbation, and the model's native stride in series steps.
struct TrainTask {
    Formulation formulation = Formulation::direct;
    LossConfig loss;
    ExtrasConfig extras;
    NoiseConfig noise;
    int64_t horizon_steps = 1;
};

struct TrainResult {
    std::vector<double> loss_history;  // epochs * steps_per_epoch entries
    std::vector<double> val_mse;       // per epoch, normalized units
    int64_t steps_per_epoch = 0;
};

// Raised when the loss goes non-finite; the message carries a snapshot of
// where training stood.
struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Single-step supervised training on normalized data. Noise applies to the
// dynamic input channels only, never to targets or static extras. Windows
// are drawn from the train range; validation MSE uses the val range with
// noise off.
TrainResult train(Model& model, const WeatherSeries& norm_series, const SplitRanges& splits,
                  const TrainTask& task, const OptimConfig& optim,
                  const StaticChannelSet& statics);

enum class PretrainObjective { supervised, autoencoder, masked_autoencoder, denoising_autoencoder };

PretrainObjective parse_pretrain_objective(const std::string& name);
std::string pretrain_objective_name(PretrainObjective o);

struct PretrainConfig {
    PretrainObjective objective = PretrainObjective::supervised;
    double mask_ratio = 0.5;
    double dae_noise_std = 0.1;

    void validate() const;
};

// Reconstruction pretraining of the newest dynamic frame from the assembled
// input. The autoencoder objective removes skip connections for the
// duration (they stay off in the returned model; reinitialize and re-enable
// them before fine-tuning); masking zeroes floor(mask_ratio*C) whole input
// channels per sample and supervises only those channels; denoising adds
// Gaussian noise of std dae_noise_std to the dynamic inputs. The supervised
// objective is exactly train().
TrainResult pretrain(Model& model, const WeatherSeries& norm_series, const SplitRanges& splits,
                     const TrainTask& task, const PretrainConfig& cfg, const OptimConfig& optim,
                     const StaticChannelSet& statics);

// Skip-connection plumbing shared by pretraining and checkpoint transfer;
// understands both the plain UNet and the graph-wrapped core. No-ops for
// models without skips.
void set_model_skips(Model& model, bool on);
void reinit_model_skips(Model& model, Rng& rng);

struct FinetuneConfig {
    std::vector<int64_t> stage_steps = {2, 3, 4};  // rollout length per stage
    std::string supervision = "intermediate";      // or "last_step"
    double discount = 0.9;
    bool scheduled_sampling = false;               // intermediate mode only
    int64_t epochs_per_stage = 10;

    void validate() const;
};

// Discounted supervision weights w_i = discount^(i-1) for i = 1..k, built by
// repeated multiplication so small cases match their decimal literals.
std::vector<double> supervision_weights(int64_t k, double discount);

// Prediction weight of the scheduled-sampling input mix at 1-based epoch e
// of total: e/total, linear from 1/total to 1.
double scheduled_sampling_weight(int64_t epoch, int64_t total_epochs);

// Sequential multi-step fine-tuning: for each stage, backpropagate through
// rollouts of the stage's length. Optimizer state and the cosine schedule
// restart at each stage.
TrainResult finetune_multistep(Model& model, const WeatherSeries& norm_series,
                               const SplitRanges& splits, const TrainTask& task,
                               const FinetuneConfig& cfg, const OptimConfig& optim,
                               const StaticChannelSet& statics);

// Checkpoints: a small binary container with a JSON header describing the
// parameter table and metadata, followed by raw doubles.
struct CheckpointParam {
    std::string name;
    Tensor value;
};

struct Checkpoint {
    std::string meta_json;  // free-form metadata, valid JSON object
    std::vector<CheckpointParam> params;
};

void save_checkpoint(const std::string& path, const Model& model, const std::string& meta_json);
// Parses the whole file before returning; throws on any structural problem.
Checkpoint load_checkpoint(const std::string& path);

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> reinitialized;
    std::vector<std::string> skipped;  // model params with no usable source
    std::vector<std::string> unused;   // checkpoint params with no target

    std::string to_text() const;
};

// Copies checkpoint parameters into the model by name where shapes agree.
// Head parameters (model.head_param_names) are redrawn from their init
// distributions when reinit_heads is set or their shapes mismatch; other
// mismatches are skipped. Throws when nothing at all is loadable.
LoadReport load_partial_checkpoint(Model& model, const Checkpoint& ckpt, bool reinit_heads,
                                   Rng& rng);

}  // namespace wxlab

// SPDX-License-Identifier: Apache-2.0
//
// Optimizer exactness (decoupled decay, cosine schedule, supervision
// weights), the single-step and multi-step training loops, reconstruction
// pretraining contracts, and partial checkpoint transfer.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include "wxlab/training.hpp"

using namespace wxlab;
namespace ad = wxlab::ad;

namespace {

WeatherSeries noisy_series(int64_t channels, int64_t n_time) {
    SyntheticRecipe recipe;
    recipe.kind = "persistence_plus_noise";
    recipe.n_lat = 4;
    recipe.n_lon = 8;
    recipe.n_time = n_time;
    recipe.n_channels = channels;
    recipe.seed = 11;
    recipe.noise_amplitude = 0.05;
    return generate_synthetic(recipe);
}

WeatherSeries normalized_rotation(int64_t n_time) {
    SyntheticRecipe recipe;
    recipe.kind = "solid_rotation_advection";
    recipe.n_lat = 4;
    recipe.n_lon = 8;
    recipe.n_time = n_time;
    recipe.n_channels = 2;
    recipe.seed = 21;
    recipe.shift_columns = 1;
    WeatherSeries raw = generate_synthetic(recipe);
    return normalize(raw, compute_normalization(raw, 0, raw.n_time()));
}

UNetConfig small_unet(int64_t in_c, int64_t out_c) {
    UNetConfig cfg;
    cfg.n_blocks = 2;
    cfg.base_width = 4;
    cfg.in_channels = in_c;
    cfg.out_channels = out_c;
    return cfg;
}

// Records every batch the wrapped core sees; the registry stays empty so the
// optimizer leaves the core untouched (inputs are all we inspect).
class ProbeModel : public Model {
public:
    ProbeModel(const UNetConfig& cfg, uint64_t seed) : inner_(cfg, seed) {}
    ad::Var forward(const ad::Var& x) override {
        seen.push_back(x->value);
        return inner_.forward(x);
    }
    int64_t in_channels() const override { return inner_.in_channels(); }
    int64_t out_channels() const override { return inner_.out_channels(); }
    std::vector<std::string> head_param_names() const override { return {}; }

    std::vector<Tensor> seen;

private:
    UNet inner_;
};

}  // namespace

TEST_CASE("cosine schedule hits its anchors exactly") {
    CHECK(cosine_lr(0, 100, 0.02) == 0.02);
    CHECK(cosine_lr(100, 100, 0.02) == 0.0);
    CHECK(std::abs(cosine_lr(50, 100, 0.02) - 0.01) <= 1e-17);
    CHECK(cosine_lr(25, 100, 0.02) > cosine_lr(75, 100, 0.02));
    CHECK_THROWS_AS(cosine_lr(0, 0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(cosine_lr(-1, 100, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(cosine_lr(101, 100, 0.02), std::invalid_argument);
}

TEST_CASE("adamw decay is decoupled: zero gradient shrinks weights exactly") {
    UNet net(small_unet(2, 2), 3);
    const double lr = 0.01, wd = 0.1;
    AdamW opt(net, wd);

    std::vector<Tensor> before;
    for (const auto& p : net.parameters()) before.push_back(p.var->value);

    net.zero_grad();  // no backward: every gradient stays empty
    opt.step(lr);
    CHECK(opt.steps_taken() == 1);

    size_t i = 0;
    for (const auto& p : net.parameters()) {
        const Tensor& now = p.var->value;
        for (int64_t e = 0; e < now.numel(); ++e) {
            CHECK(now[e] == before[i][e] * (1.0 - lr * wd));
        }
        ++i;
    }
}

TEST_CASE("supervision weights are the exact discount powers") {
    const std::vector<double> w = supervision_weights(3, 0.9);
    REQUIRE(w.size() == 3);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == 0.9);
    CHECK(w[2] == 0.81);  // 0.9*0.9 rounds to the decimal literal
    CHECK(supervision_weights(1, 0.5) == std::vector<double>{1.0});
    CHECK_THROWS_AS(supervision_weights(0, 0.9), std::invalid_argument);
}

TEST_CASE("scheduled sampling weight is epoch/total, matching the literals") {
    const double literals[10] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    for (int64_t e = 1; e <= 10; ++e) {
        CHECK(scheduled_sampling_weight(e, 10) == literals[e - 1]);
    }
    // The naive accumulation 0.1*e drifts off the literals; the quotient
    // definition is what keeps the advertised schedule exact.
    CHECK(0.1 * 3.0 != 0.3);
    CHECK(scheduled_sampling_weight(3, 10) == 0.3);
    CHECK_THROWS_AS(scheduled_sampling_weight(0, 10), std::invalid_argument);
    CHECK_THROWS_AS(scheduled_sampling_weight(11, 10), std::invalid_argument);
    CHECK_THROWS_AS(scheduled_sampling_weight(1, 0), std::invalid_argument);
}

TEST_CASE("optimizer config rejects nonsense") {
    OptimConfig cfg;
    cfg.validate();
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lr = 0.001;
    cfg.weight_decay = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.weight_decay = 0.0;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.epochs = 1;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("single-step training overfits a small rotation series") {
    const WeatherSeries series = normalized_rotation(24);
    const SplitRanges splits = make_splits(24, 0.7, 0.15);

    TrainTask task;
    task.formulation = Formulation::direct;
    UNet net(small_unet(2, 2), 9);
    OptimConfig optim;
    optim.epochs = 8;
    optim.batch_size = 4;
    optim.lr = 0.01;
    optim.seed = 1;
    StaticChannelSet statics;

    const TrainResult res = train(net, series, splits, task, optim, statics);
    const int64_t spe = res.steps_per_epoch;
    REQUIRE(spe > 0);
    CHECK(res.loss_history.size() == static_cast<size_t>(optim.epochs * spe));
    CHECK(res.val_mse.size() == static_cast<size_t>(optim.epochs));

    auto epoch_mean = [&](int64_t e) {
        double acc = 0.0;
        for (int64_t b = 0; b < spe; ++b) {
            acc += res.loss_history[static_cast<size_t>(e * spe + b)];
        }
        return acc / static_cast<double>(spe);
    };
    const double first = epoch_mean(0), last = epoch_mean(optim.epochs - 1);
    std::printf("[training] overfit epoch means: first %.4f last %.4f\n", first, last);
    CHECK(last < first);
    CHECK(std::isfinite(res.val_mse.back()));

    // The validation series tracks the same metric the loop optimizes.
    CHECK(res.val_mse.back() <= res.val_mse.front());
}

TEST_CASE("training refuses an empty train window set") {
    const WeatherSeries series = normalized_rotation(24);
    SplitRanges splits = make_splits(24, 0.7, 0.15);
    splits.train_begin = splits.train_end;  // force empty

    TrainTask task;
    UNet net(small_unet(2, 2), 9);
    OptimConfig optim;
    optim.epochs = 1;
    StaticChannelSet statics;
    CHECK_THROWS_AS(train(net, series, splits, task, optim, statics), std::invalid_argument);
}

TEST_CASE("an overflowing loss raises a divergence error with context") {
    // Scale the data to ~1e160: the normalization layers flush the huge
    // activations to zero, so the prediction stays finite while the squared
    // error against the huge target overflows to inf.
    WeatherSeries series = normalized_rotation(24);
    for (int64_t i = 0; i < series.data.numel(); ++i) series.data[i] *= 1e160;
    const SplitRanges splits = make_splits(24, 0.7, 0.15);

    TrainTask task;
    UNet net(small_unet(2, 2), 9);
    OptimConfig optim;
    optim.epochs = 1;
    optim.batch_size = 4;
    StaticChannelSet statics;
    CHECK_THROWS_WITH_AS(train(net, series, splits, task, optim, statics),
                         doctest::Contains("training diverged"), TrainingDivergence);
}

TEST_CASE("pretraining objective names parse both ways") {
    CHECK(parse_pretrain_objective("supervised") == PretrainObjective::supervised);
    CHECK(parse_pretrain_objective("autoencoder") == PretrainObjective::autoencoder);
    CHECK(parse_pretrain_objective("masked_autoencoder") == PretrainObjective::masked_autoencoder);
    CHECK(parse_pretrain_objective("denoising_autoencoder") ==
          PretrainObjective::denoising_autoencoder);
    CHECK(pretrain_objective_name(PretrainObjective::masked_autoencoder) == "masked_autoencoder");
    CHECK_THROWS_AS(parse_pretrain_objective("masked_reconstruction"), std::invalid_argument);

    PretrainConfig cfg;
    cfg.mask_ratio = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.mask_ratio = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.mask_ratio = 0.5;
    cfg.dae_noise_std = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("masked pretraining zeroes exactly floor(ratio*C) channels per sample") {
    const WeatherSeries raw = noisy_series(5, 12);
    const WeatherSeries series = normalize(raw, compute_normalization(raw, 0, 12));
    const SplitRanges splits = make_splits(12, 0.7, 0.15);

    TrainTask task;
    task.extras.n_input_steps = 2;
    ProbeModel probe(small_unet(10, 5), 4);
    PretrainConfig pcfg;
    pcfg.objective = PretrainObjective::masked_autoencoder;
    pcfg.mask_ratio = 0.5;  // floor(0.5*5) = 2 channels
    OptimConfig optim;
    optim.epochs = 1;
    optim.batch_size = 2;
    StaticChannelSet statics;

    pretrain(probe, series, splits, task, pcfg, optim, statics);
    REQUIRE(!probe.seen.empty());
    for (const Tensor& batch : probe.seen) {
        const int64_t nb = batch.dim(0);
        for (int64_t s = 0; s < nb; ++s) {
            int64_t zeroed = 0;
            for (int64_t ch = 0; ch < 5; ++ch) {
                bool all_zero = true;
                for (int64_t step = 0; step < 2 && all_zero; ++step) {
                    for (int64_t i = 0; i < 4 && all_zero; ++i) {
                        for (int64_t j = 0; j < 8; ++j) {
                            if (batch.at(s, step * 5 + ch, i, j) != 0.0) {
                                all_zero = false;
                                break;
                            }
                        }
                    }
                }
                if (all_zero) ++zeroed;
            }
            CHECK(zeroed == 2);
        }
    }

    // A ratio that rounds down to zero masked channels is a configuration
    // error, not a silent no-op.
    const WeatherSeries single = noisy_series(1, 12);
    ProbeModel p2(small_unet(2, 1), 4);
    CHECK_THROWS_WITH_AS(pretrain(p2, single, make_splits(12, 0.7, 0.15), task, pcfg, optim,
                                  statics),
                         doctest::Contains("masks zero"), std::invalid_argument);
}

TEST_CASE("denoising with zero noise equals the plain autoencoder") {
    const WeatherSeries raw = noisy_series(3, 14);
    const WeatherSeries series = normalize(raw, compute_normalization(raw, 0, 14));
    const SplitRanges splits = make_splits(14, 0.7, 0.15);

    TrainTask task;
    task.extras.n_input_steps = 1;
    OptimConfig optim;
    optim.epochs = 2;
    optim.batch_size = 3;
    optim.seed = 8;
    StaticChannelSet statics;

    UNet a(small_unet(3, 3), 6);
    a.set_use_skips(false);  // match what the autoencoder path does internally
    UNet b(small_unet(3, 3), 6);
    b.set_use_skips(false);

    PretrainConfig ae;
    ae.objective = PretrainObjective::autoencoder;
    const TrainResult ra = pretrain(a, series, splits, task, ae, optim, statics);

    PretrainConfig dae;
    dae.objective = PretrainObjective::denoising_autoencoder;
    dae.dae_noise_std = 0.0;
    const TrainResult rb = pretrain(b, series, splits, task, dae, optim, statics);

    REQUIRE(ra.loss_history.size() == rb.loss_history.size());
    for (size_t i = 0; i < ra.loss_history.size(); ++i) {
        CHECK(ra.loss_history[i] == rb.loss_history[i]);
    }
    REQUIRE(ra.val_mse.size() == rb.val_mse.size());
    for (size_t i = 0; i < ra.val_mse.size(); ++i) CHECK(ra.val_mse[i] == rb.val_mse[i]);
}

TEST_CASE("supervised pretraining is a synonym for train") {
    const WeatherSeries series = normalized_rotation(20);
    const SplitRanges splits = make_splits(20, 0.7, 0.15);
    TrainTask task;
    OptimConfig optim;
    optim.epochs = 2;
    optim.seed = 5;
    StaticChannelSet statics;

    UNet a(small_unet(2, 2), 2);
    UNet b(small_unet(2, 2), 2);
    const TrainResult ra = train(a, series, splits, task, optim, statics);
    PretrainConfig pcfg;  // objective defaults to supervised
    const TrainResult rb = pretrain(b, series, splits, task, pcfg, optim, statics);

    REQUIRE(ra.loss_history.size() == rb.loss_history.size());
    for (size_t i = 0; i < ra.loss_history.size(); ++i) {
        CHECK(ra.loss_history[i] == rb.loss_history[i]);
    }
}

TEST_CASE("finetune config enforces its invariants") {
    FinetuneConfig cfg;
    cfg.validate();
    cfg.stage_steps = {};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.stage_steps = {3, 2};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.stage_steps = {2, 3};
    cfg.supervision = "all_steps";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.supervision = "last_step";
    cfg.scheduled_sampling = true;
    CHECK_THROWS_WITH_AS(cfg.validate(),
                         doctest::Contains("scheduled sampling requires intermediate"),
                         std::invalid_argument);
    cfg.supervision = "intermediate";
    cfg.discount = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.discount = 0.9;
    cfg.epochs_per_stage = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("multi-step finetuning runs its stages and sizes its histories") {
    const WeatherSeries series = normalized_rotation(24);
    const SplitRanges splits = make_splits(24, 0.7, 0.15);
    TrainTask task;
    UNet net(small_unet(2, 2), 9);
    OptimConfig optim;
    optim.epochs = 1;  // ignored by finetune; stages use epochs_per_stage
    optim.batch_size = 4;
    optim.lr = 0.003;
    StaticChannelSet statics;

    FinetuneConfig cfg;
    cfg.stage_steps = {1, 2};
    cfg.supervision = "intermediate";
    cfg.scheduled_sampling = true;
    cfg.epochs_per_stage = 2;

    const TrainResult res = finetune_multistep(net, series, splits, task, cfg, optim, statics);
    CHECK(res.val_mse.size() == static_cast<size_t>(2 * cfg.epochs_per_stage));
    CHECK(!res.loss_history.empty());
    for (double v : res.loss_history) CHECK(std::isfinite(v));

    // A stage longer than the training range is caught up front.
    FinetuneConfig huge;
    huge.stage_steps = {64};
    UNet net2(small_unet(2, 2), 9);
    CHECK_THROWS_WITH_AS(finetune_multistep(net2, series, splits, task, huge, optim, statics),
                         doctest::Contains("exceeds"), std::invalid_argument);
}

TEST_CASE("last-step supervision still reaches the trunk") {
    const WeatherSeries series = normalized_rotation(24);
    const SplitRanges splits = make_splits(24, 0.7, 0.15);
    TrainTask task;
    UNet net(small_unet(2, 2), 9);
    OptimConfig optim;
    optim.batch_size = 4;
    optim.lr = 1e-6;  // keep weights essentially fixed; we only probe grads
    StaticChannelSet statics;

    FinetuneConfig cfg;
    cfg.stage_steps = {2};
    cfg.supervision = "last_step";
    cfg.epochs_per_stage = 1;
    finetune_multistep(net, series, splits, task, cfg, optim, statics);

    const auto head_list = net.head_param_names();
    const std::set<std::string> heads(head_list.begin(), head_list.end());
    double trunk_grad = 0.0;
    for (const auto& p : net.parameters()) {
        if (heads.count(p.name) > 0 || p.var->grad.empty()) continue;
        trunk_grad = std::max(trunk_grad, p.var->grad.max_abs());
    }
    std::printf("[training] last-step trunk grad magnitude: %.3e\n", trunk_grad);
    CHECK(trunk_grad > 0.0);
}

TEST_CASE("partial checkpoint loads reinitialize mismatched heads only") {
    Rng rng(14);
    UNet src(small_unet(5, 2), 31);
    save_checkpoint("ckpt_partial.bin", src, "");
    const Checkpoint ckpt = load_checkpoint("ckpt_partial.bin");

    UNet dst(small_unet(3, 2), 77);  // narrower input stem
    const LoadReport rep = load_partial_checkpoint(dst, ckpt, false, rng);
    CHECK(!rep.reinitialized.empty());
    const auto head_list = dst.head_param_names();
    const std::set<std::string> heads(head_list.begin(), head_list.end());
    for (const auto& name : rep.reinitialized) CHECK(heads.count(name) > 0);
    for (const auto& name : rep.loaded) {
        const Tensor& a = dst.param(name)->value;
        const Tensor& b = src.param(name)->value;
        REQUIRE(a.same_shape(b));
        for (int64_t e = 0; e < a.numel(); ++e) CHECK(a[e] == b[e]);
    }

    // reinit_heads redraws every head even when the shapes agree.
    UNet same(small_unet(5, 2), 78);
    const LoadReport rep2 = load_partial_checkpoint(same, ckpt, true, rng);
    CHECK(rep2.reinitialized.size() == same.head_param_names().size());

    // A checkpoint from an unrelated model loads nothing and changes nothing.
    GraphUNetConfig gcfg;
    gcfg.core.n_blocks = 2;
    gcfg.core.base_width = 4;
    gcfg.in_channels = 2;
    gcfg.out_channels = 2;
    gcfg.latent_width = 4;
    gcfg.k = 3;
    gcfg.kernel_width = 8;
    GraphUNet graph(gcfg, GridSpec::regular(4, 8), 9);
    save_checkpoint("ckpt_graph.bin", graph, "");
    const Checkpoint gckpt = load_checkpoint("ckpt_graph.bin");

    UNet untouched(small_unet(5, 2), 31);
    std::vector<Tensor> before;
    for (const auto& p : untouched.parameters()) before.push_back(p.var->value);
    CHECK_THROWS_WITH_AS(load_partial_checkpoint(untouched, gckpt, false, rng),
                         doctest::Contains("no loadable parameters"), std::runtime_error);
    size_t i = 0;
    for (const auto& p : untouched.parameters()) {
        const Tensor& now = p.var->value;
        for (int64_t e = 0; e < now.numel(); ++e) CHECK(now[e] == before[i][e]);
        ++i;
    }

    // Truncated files fail loudly, before any state is produced.
    {
        std::ifstream in("ckpt_partial.bin", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes.resize(bytes.size() / 2);
        std::ofstream out("ckpt_truncated.bin", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint("ckpt_truncated.bin"), std::runtime_error);
}

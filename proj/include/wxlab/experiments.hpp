// SPDX-License-Identifier: Apache-2.0
//
// Declarative experiment configs (strict JSON schema, environment variable
// overrides, canonical hashing), the end-to-end run pipeline
// (pretrain -> train -> finetune -> evaluate into a run directory), one-axis
// ablation matrices, and aggregation of finished runs into merged tables
// and figures.

#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "wxlab/dataset.hpp"
#include "wxlab/forecast.hpp"
#include "wxlab/models.hpp"
#include "wxlab/training.hpp"

namespace wxlab {

// Error taxonomy surfaced by the CLI as machine-parseable categories.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetSpec {
    bool is_synthetic = true;
    SyntheticRecipe synthetic;
    std::string path;  // container directory when not synthetic
    double train_frac = 0.7;
    double val_frac = 0.15;
};

struct ModelSpec {
    std::string type = "unet";  // unet | graph_unet
    int64_t n_blocks = 2;
    int64_t base_width = 8;
    PaddingScheme padding;
    // graph_unet only:
    int64_t latent_width = 8;
    int64_t k = 4;
    int64_t kernel_width = 16;
};

struct StaticsSpec {
    std::string path;  // mask container; synthesized from seed when empty
    uint64_t seed = 0;
};

struct PretrainSpec {
    bool enabled = false;
    PretrainConfig cfg;
    int64_t epochs = 0;  // 0: reuse optim.epochs
};

struct FinetuneSpec {
    bool enabled = false;
    FinetuneConfig cfg;
};

struct InitCheckpointSpec {
    bool enabled = false;
    std::string path;
    bool reinit_heads = false;
};

struct ExperimentConfig {
    std::string run_id;
    std::string label;  // axis label in comparisons; defaults to run_id
    uint64_t seed = 0;
    DatasetSpec dataset;
    ModelSpec model;
    Formulation formulation = Formulation::direct;
    LossConfig loss;
    ExtrasConfig extras;
    NoiseConfig noise;
    OptimConfig optim;
    int64_t horizon_steps = 1;
    std::vector<int64_t> horizons = {1, 2, 4};
    StaticsSpec statics;
    PretrainSpec pretrain;
    FinetuneSpec finetune;
    InitCheckpointSpec init_checkpoint;

    void validate() const;  // throws ValidationError
};

// Strict parse: unknown keys anywhere are errors, and the physics-affecting
// choices (formulation, loss kind, the extras block) must be explicit.
// Throws ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);

// File load plus environment overrides: WXLAB_A__B=value sets key a.b, with
// values parsed as JSON scalars when possible. apply_env off gives the file
// verbatim.
ExperimentConfig load_experiment_config(const std::string& path, bool apply_env = true);

// Single dotted-path override on raw config text, shared by env handling and
// the ablation matrix.
std::string override_config_text(const std::string& json_text, const std::string& dotted_key,
                                 const std::string& value);

// Applies every WXLAB_* environment variable as an override on the raw text.
std::string apply_env_overrides(std::string json_text);

// Resolved config with every default materialized, keys sorted.
std::string canonical_config_json(const ExperimentConfig& cfg);

// FNV-1a over the canonical form minus run_id and label, so renaming a run
// keeps its identity while any semantic change alters the hash.
uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_hash_hex(const ExperimentConfig& cfg);

// Dataset and model realization shared by the pipeline and the CLI.
WeatherSeries materialize_series(const DatasetSpec& spec);
StaticChannelSet materialize_statics(const ExperimentConfig& cfg, const GridSpec& grid);
std::unique_ptr<Model> build_model(const ModelSpec& spec, int64_t in_channels,
                                   int64_t out_channels, const GridSpec& grid, uint64_t seed);

struct RunOutcome {
    std::string run_dir;
    HorizonTable table;
};

// Executes the configured pipeline into <out_root>/<run_id>. Refuses an
// existing run directory unless force. Artifacts: config.json,
// config_hash.txt, checkpoints per phase, metrics.csv, loss_history.csv,
// val_history.csv, load_report.txt, status.json (flags partial runs), and
// per-metric horizon plots.
RunOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_root, bool force);

// Phase subsets used by the stage-wise CLI verbs. Fine-tuning continues an
// existing run in place, starting from checkpoint_path (default
// <out_root>/<run_id>/train.ckpt).
RunOutcome run_pretrain_only(const ExperimentConfig& cfg, const std::string& out_root, bool force);
RunOutcome run_finetune_from(const ExperimentConfig& cfg, const std::string& out_root,
                             const std::string& checkpoint_path = "");

// Rebuilds the configured data and model, loads checkpoint_path (default
// <out_root>/<run_id>/model.ckpt) including its recorded skip-connection
// setting, and rewrites metrics.csv and the horizon figures in the run
// directory without any training.
RunOutcome evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& out_root,
                               const std::string& checkpoint_path = "");

// Loads like evaluate_checkpoint, then rolls the model k_steps (default: the
// largest configured horizon) from the test window ending at time index
// init_time (default: the first usable one). The predicted fields land as a
// series container under <run_dir>/rollout/, with per-step metrics against
// whatever ground truth the series still covers in rollout_metrics.csv.
std::string rollout_checkpoint(const ExperimentConfig& cfg, const std::string& out_root,
                               int64_t k_steps = 0, int64_t init_time = -1,
                               const std::string& checkpoint_path = "");

// One run per value of one config key; every config is validated before the
// first run starts. Values are JSON scalars in text form. Labels are
// "<key>=<value>"; run ids get a sanitized suffix.
std::vector<std::string> run_matrix(const std::string& base_config_text,
                                    const std::string& axis_key,
                                    const std::vector<std::string>& values,
                                    const std::string& out_root, bool force);

// Aggregates finished run directories: merged.csv keyed by run and label,
// a line plot per metric (horizon on x, one curve per run), and, when
// default_run_id is non-empty, marginal bar charts against that run at the
// largest shared horizon. Never recomputes metrics.
void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                  const std::string& default_run_id = "");

// Re-renders the comparison figures from an existing merged.csv.
void plot_merged(const std::string& merged_csv, const std::string& out_dir);

}  // namespace wxlab

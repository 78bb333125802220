// SPDX-License-Identifier: Apache-2.0
//
// Experiment layer: strict config parsing, canonical hashing, environment
// overrides, the run pipeline's on-disk contract, ablation matrices with
// comparison artifacts, and the installed CLI's error taxonomy.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wxlab/experiments.hpp"

using namespace wxlab;
namespace fs = std::filesystem;

namespace {

std::string base_config(const std::string& run_id) {
    return std::string(R"({
  "run_id": ")") +
           run_id + R"(",
  "seed": 5,
  "dataset": {
    "synthetic": {"kind": "solid_rotation_advection", "n_lat": 8, "n_lon": 16,
                  "n_time": 16, "n_channels": 2, "seed": 3},
    "train_frac": 0.7,
    "val_frac": 0.15
  },
  "model": {"type": "unet", "n_blocks": 2, "base_width": 4},
  "formulation": "delta",
  "loss": {"kind": "mse"},
  "extras": {"n_input_steps": 1, "zenith": false, "coords": false},
  "optim": {"epochs": 1, "batch_size": 4, "lr": 0.005},
  "horizons": [1, 2]
})";
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::path("exp_scratch") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& scratch) {
    const std::string cmd = std::string(WXLAB_CLI_PATH) + " " + args + " >" +
                            (scratch / "out.txt").string() + " 2>" +
                            (scratch / "err.txt").string();
    const int rc = std::system(cmd.c_str());
    return rc >= 0 ? (rc >> 8) & 0xFF : -1;
}

}  // namespace

TEST_CASE("config parsing is strict about keys and requirements") {
    const ExperimentConfig cfg = parse_experiment_config(base_config("ok"));
    CHECK(cfg.run_id == "ok");
    CHECK(cfg.label == "ok");  // defaults to the run id
    CHECK(cfg.formulation == Formulation::delta);
    CHECK(cfg.horizons == std::vector<int64_t>({1, 2}));
    cfg.validate();

    // Unknown keys anywhere are hard errors.
    CHECK_THROWS_AS(parse_experiment_config(override_config_text(base_config("x"),
                                                                 "optmi.epochs", "3")),
                    ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(override_config_text(base_config("x"),
                                                                 "model.blocks", "3")),
                    ConfigError);

    // The physics-affecting choices must be explicit.
    nlohmann::json doc = nlohmann::json::parse(base_config("x"));
    for (const char* key : {"run_id", "formulation", "loss", "extras", "dataset"}) {
        nlohmann::json copy = doc;
        copy.erase(key);
        CHECK_THROWS_AS(parse_experiment_config(copy.dump()), ConfigError);
    }
    {
        nlohmann::json copy = doc;
        copy["extras"].erase("coords");
        CHECK_THROWS_AS(parse_experiment_config(copy.dump()), ConfigError);
    }
    {
        nlohmann::json copy = doc;
        copy["dataset"]["path"] = "somewhere";  // synthetic XOR path
        CHECK_THROWS_AS(parse_experiment_config(copy.dump()), ConfigError);
    }
    CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config("[1,2]"), ConfigError);
}

TEST_CASE("config validation rejects bad semantics") {
    ExperimentConfig cfg = parse_experiment_config(base_config("ok"));
    cfg.run_id = "has space";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.run_id = "ok";
    cfg.model.type = "transformer";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.model.type = "unet";
    cfg.dataset.synthetic.kind = "weather_from_thin_air";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.dataset.synthetic.kind = "solid_rotation_advection";
    cfg.dataset.train_frac = 0.9;
    cfg.dataset.val_frac = 0.2;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.dataset.val_frac = 0.05;
    cfg.horizons.clear();
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.horizons = {1};
    cfg.extras.masks = {"not_a_known_mask"};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("the config hash ignores naming and tracks semantics") {
    const ExperimentConfig a = parse_experiment_config(base_config("first"));
    ExperimentConfig renamed = parse_experiment_config(base_config("second"));
    renamed.label = "pretty label";
    CHECK(config_hash(a) == config_hash(renamed));
    CHECK(config_hash_hex(a).size() == 16);

    const ExperimentConfig changed = parse_experiment_config(
        override_config_text(base_config("first"), "loss.kind", "\"l1\""));
    CHECK(config_hash(a) != config_hash(changed));

    // Materializing the canonical form and re-parsing it is a fixed point.
    const ExperimentConfig round = parse_experiment_config(canonical_config_json(a));
    CHECK(config_hash(round) == config_hash(a));
    CHECK(canonical_config_json(a).find("\"optim\"") != std::string::npos);
}

TEST_CASE("dotted overrides parse JSON scalars and fall back to strings") {
    const std::string text = base_config("x");
    ExperimentConfig cfg =
        parse_experiment_config(override_config_text(text, "optim.epochs", "3"));
    CHECK(cfg.optim.epochs == 3);

    cfg = parse_experiment_config(override_config_text(text, "formulation", "direct"));
    CHECK(cfg.formulation == Formulation::direct);  // bare word becomes a string

    cfg = parse_experiment_config(override_config_text(text, "noise.kind", "\"gaussian\""));
    CHECK(cfg.noise.kind == NoiseKind::gaussian);  // creates the missing block

    cfg = parse_experiment_config(override_config_text(text, "horizons", "[1,4]"));
    CHECK(cfg.horizons == std::vector<int64_t>({1, 4}));
}

TEST_CASE("environment variables override the loaded file") {
    unsetenv("WXLAB_OPTIM__EPOCHS");
    unsetenv("WXLAB_LABEL");
    setenv("WXLAB_OPTIM__EPOCHS", "7", 1);
    setenv("WXLAB_LABEL", "from env", 1);
    const ExperimentConfig cfg = parse_experiment_config(apply_env_overrides(base_config("x")));
    unsetenv("WXLAB_OPTIM__EPOCHS");
    unsetenv("WXLAB_LABEL");
    CHECK(cfg.optim.epochs == 7);
    CHECK(cfg.label == "from env");

    const ExperimentConfig clean = parse_experiment_config(apply_env_overrides(base_config("x")));
    CHECK(clean.optim.epochs == 1);
}

TEST_CASE("a run leaves the full artifact set and refuses to overwrite") {
    const fs::path root = fresh_dir("single");
    const ExperimentConfig cfg = parse_experiment_config(base_config("run_a"));

    const RunOutcome out = run_experiment(cfg, root.string(), false);
    const fs::path dir = out.run_dir;
    CHECK(dir == root / "run_a");
    for (const char* name : {"config.json", "config_hash.txt", "train.ckpt", "model.ckpt",
                             "metrics.csv", "loss_history.csv", "val_history.csv",
                             "load_report.txt", "status.json", "rmse.svg", "acc.svg"}) {
        CAPTURE(name);
        CHECK(fs::exists(dir / name));
    }
    CHECK(out.table.reports.size() == 2);
    CHECK(slurp(dir / "config_hash.txt") == config_hash_hex(cfg) + "\n");
    CHECK(slurp(dir / "load_report.txt") == "no checkpoint transfer in this run\n");

    const nlohmann::json status = nlohmann::json::parse(slurp(dir / "status.json"));
    CHECK(status.at("state") == "complete");
    CHECK(status.at("partial") == false);

    const std::string metrics = slurp(dir / "metrics.csv");
    CHECK(metrics.rfind("run_id,", 0) == 0);
    CHECK(metrics.find("MEAN") != std::string::npos);

    CHECK_THROWS_WITH_AS(run_experiment(cfg, root.string(), false), doctest::Contains("--force"),
                         IoError);
    CHECK_NOTHROW(run_experiment(cfg, root.string(), true));
}

TEST_CASE("identical config and seed reproduce every emitted number") {
    const ExperimentConfig cfg = parse_experiment_config(base_config("twin"));
    const fs::path ra = fresh_dir("determinism_a");
    const fs::path rb = fresh_dir("determinism_b");
    run_experiment(cfg, ra.string(), false);
    run_experiment(cfg, rb.string(), false);

    for (const char* name : {"metrics.csv", "loss_history.csv", "val_history.csv"}) {
        CAPTURE(name);
        CHECK(slurp(ra / "twin" / name) == slurp(rb / "twin" / name));
    }
}

TEST_CASE("pretrain and finetune phases add their checkpoints and transfer notes") {
    std::string text = base_config("phases");
    text = override_config_text(text, "pretrain",
                                R"({"objective": "autoencoder", "epochs": 1})");
    text = override_config_text(text, "finetune",
                                R"({"stage_steps": [1, 2], "epochs_per_stage": 1})");
    const ExperimentConfig cfg = parse_experiment_config(text);
    const fs::path root = fresh_dir("phased");

    run_experiment(cfg, root.string(), false);
    const fs::path dir = root / "phases";
    for (const char* name : {"pretrain.ckpt", "train.ckpt", "finetune.ckpt", "model.ckpt"}) {
        CAPTURE(name);
        CHECK(fs::exists(dir / name));
    }
    const std::string report = slurp(dir / "load_report.txt");
    CHECK(report.find("pretrain -> train transfer") != std::string::npos);
    CHECK(report.find("skip connections reinitialized") != std::string::npos);

    const std::string losses = slurp(dir / "loss_history.csv");
    CHECK(losses.find("pretrain,") != std::string::npos);
    CHECK(losses.find("train,") != std::string::npos);
    CHECK(losses.find("finetune,") != std::string::npos);
}

TEST_CASE("a failure mid-pipeline is recorded in status.json") {
    // The fine-tune stage is far longer than the series, which only the
    // training phase itself can discover.
    std::string text = base_config("doomed");
    text = override_config_text(text, "finetune", R"({"stage_steps": [64]})");
    const ExperimentConfig cfg = parse_experiment_config(text);
    const fs::path root = fresh_dir("failing");

    CHECK_THROWS_AS(run_experiment(cfg, root.string(), false), std::invalid_argument);
    const nlohmann::json status = nlohmann::json::parse(slurp(root / "doomed" / "status.json"));
    CHECK(status.at("state") == "failed");
    CHECK(status.at("partial") == true);
    CHECK(std::string(status.at("error")).find("exceeds") != std::string::npos);
}

TEST_CASE("container-backed datasets load, and bad paths fail as io errors") {
    const fs::path root = fresh_dir("containers");
    SyntheticRecipe recipe;
    recipe.kind = "diffusive_waves";
    recipe.n_lat = 8;
    recipe.n_lon = 16;
    recipe.n_time = 16;
    recipe.n_channels = 2;
    recipe.seed = 12;
    save_series((root / "series").string(), generate_synthetic(recipe));

    nlohmann::json doc = nlohmann::json::parse(base_config("fromdisk"));
    doc["dataset"].erase("synthetic");
    doc["dataset"]["path"] = (root / "series").string();
    const ExperimentConfig cfg = parse_experiment_config(doc.dump());
    const RunOutcome out = run_experiment(cfg, root.string(), false);
    CHECK(fs::exists(fs::path(out.run_dir) / "metrics.csv"));

    doc["dataset"]["path"] = (root / "no_such_series").string();
    const ExperimentConfig missing = parse_experiment_config(doc.dump());
    CHECK_THROWS_AS(run_experiment(missing, root.string(), false), IoError);
}

TEST_CASE("the graph model runs through the same pipeline") {
    std::string text = base_config("graphrun");
    text = override_config_text(text, "dataset.synthetic.n_lat", "4");
    text = override_config_text(text, "dataset.synthetic.n_lon", "8");
    text = override_config_text(text, "dataset.synthetic.n_time", "12");
    text = override_config_text(text, "model.type", "\"graph_unet\"");
    text = override_config_text(text, "model.latent_width", "4");
    text = override_config_text(text, "model.k", "3");
    text = override_config_text(text, "model.kernel_width", "8");
    text = override_config_text(text, "horizons", "[1]");
    const ExperimentConfig cfg = parse_experiment_config(text);
    const fs::path root = fresh_dir("graph");

    const RunOutcome out = run_experiment(cfg, root.string(), false);
    CHECK(out.table.reports.size() == 1);
    const nlohmann::json status =
        nlohmann::json::parse(slurp(fs::path(out.run_dir) / "status.json"));
    CHECK(status.at("state") == "complete");
}

TEST_CASE("matrices validate every point up front and compare cleanly") {
    const fs::path root = fresh_dir("matrix");

    // One invalid point aborts before anything is created.
    CHECK_THROWS_AS(run_matrix(base_config("mat"), "optim.epochs", {"1", "0"}, root.string(),
                               false),
                    ValidationError);
    CHECK(!fs::exists(root / "mat_optim.epochs-1"));

    const std::vector<std::string> dirs =
        run_matrix(base_config("mat"), "optim.epochs", {"1", "2"}, root.string(), false);
    REQUIRE(dirs.size() == 2);
    for (const auto& d : dirs) CHECK(fs::exists(fs::path(d) / "metrics.csv"));

    const nlohmann::json first_cfg =
        nlohmann::json::parse(slurp(fs::path(dirs[0]) / "config.json"));
    CHECK(first_cfg.at("label") == "optim.epochs=1");

    const fs::path cmp = root / "cmp";
    const std::string default_id = fs::path(dirs[0]).filename().string();
    compare_runs(dirs, cmp.string(), default_id);
    for (const char* name : {"merged.csv", "compare_acc.svg", "compare_rmse.svg",
                             "marginal_acc.svg", "marginal_rmse.svg"}) {
        CAPTURE(name);
        CHECK(fs::exists(cmp / name));
    }
    const std::string merged = slurp(cmp / "merged.csv");
    CHECK(merged.rfind("run_id,label,horizon_steps,channel,metric,value\n", 0) == 0);

    CHECK_THROWS_AS(compare_runs(dirs, (root / "cmp2").string(), "not_a_run"), ValidationError);

    const fs::path replot = root / "replot";
    plot_merged((cmp / "merged.csv").string(), replot.string());
    CHECK(fs::exists(replot / "compare_acc.svg"));
    CHECK_THROWS_AS(plot_merged((root / "nope.csv").string(), replot.string()), IoError);
}

TEST_CASE("the command line maps error categories to exit codes") {
    const fs::path scratch = fresh_dir("cli");
    write_file(scratch / "cfg.json", base_config("cli_run"));

    CHECK(run_cli("train -c " + (scratch / "cfg.json").string() + " -o " +
                      (scratch / "runs").string() + " --no-env",
                  scratch) == 0);
    const std::string table = slurp(scratch / "out.txt");
    CHECK(table.find("horizon") != std::string::npos);
    CHECK(fs::exists(scratch / "runs" / "cli_run" / "metrics.csv"));

    // Rerunning without --force is an io error (exit 3).
    CHECK(run_cli("train -c " + (scratch / "cfg.json").string() + " -o " +
                      (scratch / "runs").string() + " --no-env",
                  scratch) == 3);
    CHECK(slurp(scratch / "err.txt").find("error:io:") == 0);

    // evaluate reuses the stored checkpoint.
    CHECK(run_cli("evaluate -c " + (scratch / "cfg.json").string() + " -o " +
                      (scratch / "runs").string() + " --no-env",
                  scratch) == 0);

    // rollout writes a forecast container.
    CHECK(run_cli("rollout -c " + (scratch / "cfg.json").string() + " -o " +
                      (scratch / "runs").string() + " --steps 2 --no-env",
                  scratch) == 0);
    CHECK(fs::exists(scratch / "runs" / "cli_run" / "rollout" / "manifest.json"));
    CHECK(fs::exists(scratch / "runs" / "cli_run" / "rollout_metrics.csv"));

    // Config errors exit 2 with their category prefix.
    write_file(scratch / "bad.json", override_config_text(base_config("x"), "mdoel.type",
                                                          "\"unet\""));
    CHECK(run_cli("train -c " + (scratch / "bad.json").string() + " -o " +
                      (scratch / "runs").string() + " --no-env",
                  scratch) == 2);
    CHECK(slurp(scratch / "err.txt").find("error:config:") == 0);

    // Validation errors exit 4.
    write_file(scratch / "badval.json",
               override_config_text(base_config("cli_run2"), "model.n_blocks", "9"));
    CHECK(run_cli("train -c " + (scratch / "badval.json").string() + " -o " +
                      (scratch / "runs").string() + " --no-env",
                  scratch) == 4);
    CHECK(slurp(scratch / "err.txt").find("error:validation:") == 0);

    // Missing io surfaces exit 3; usage problems keep CLI11's code.
    CHECK(run_cli("train -c " + (scratch / "missing.json").string() + " -o " +
                      (scratch / "runs").string() + " --no-env",
                  scratch) == 3);
    CHECK(run_cli("", scratch) == 106);
    CHECK(run_cli("--help", scratch) == 0);

    // generate-data round trips through the container format.
    CHECK(run_cli("generate-data -c " + (scratch / "cfg.json").string() + " -o " +
                      (scratch / "data").string() + " --no-env",
                  scratch) == 0);
    const WeatherSeries series = load_series((scratch / "data").string());
    CHECK(series.n_time() == 16);
}

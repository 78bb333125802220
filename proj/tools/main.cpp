// SPDX-License-Identifier: Apache-2.0
//
// Command line front end. Every verb reads a JSON experiment config; dotted
// --set overrides and WXLAB_* environment variables are applied to the raw
// text before strict parsing, so typos fail loudly.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wxlab/experiments.hpp"

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> sets;  // key=value
    std::string run_id;
    int64_t seed = -1;
    bool no_env = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("-c,--config", args.path, "experiment config (JSON)")->required();
    cmd->add_option("--set", args.sets,
                    "dotted-path override, key=value (value parsed as JSON when possible)");
    cmd->add_option("--run-id", args.run_id, "override run_id");
    cmd->add_option("--seed", args.seed, "override the experiment seed");
    cmd->add_flag("--no-env", args.no_env, "ignore WXLAB_* environment overrides");
}

wxlab::ExperimentConfig resolve_config(const ConfigArgs& args) {
    std::ifstream is(args.path);
    if (!is) throw wxlab::IoError("cannot open config file: " + args.path);
    std::stringstream buf;
    buf << is.rdbuf();
    std::string text = buf.str();

    for (const auto& kv : args.sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw wxlab::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        text = wxlab::override_config_text(text, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!args.run_id.empty()) text = wxlab::override_config_text(text, "run_id", args.run_id);
    if (args.seed >= 0) {
        text = wxlab::override_config_text(text, "seed", std::to_string(args.seed));
    }
    if (!args.no_env) text = wxlab::apply_env_overrides(text);
    return wxlab::parse_experiment_config(text);
}

void print_table(const wxlab::HorizonTable& table) {
    std::cout << "horizon  rmse_mean      acc_mean       (over " << table.n_initial_conditions
              << " initial conditions)\n";
    for (size_t i = 0; i < table.horizons.size(); ++i) {
        char line[128];
        std::snprintf(line, sizeof(line), "%7lld  %-13.6g  %-13.6g",
                      static_cast<long long>(table.horizons[i]), table.reports[i].rmse_mean,
                      table.reports[i].acc_mean);
        std::cout << line << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"config-driven training and evaluation of autoregressive forecasting models "
                 "on spherical lat-lon grids"};
    app.require_subcommand(1);

    ConfigArgs gen_args;
    std::string gen_out;
    auto* gen = app.add_subcommand("generate-data",
                                   "materialize the config's dataset into a container directory");
    add_config_options(gen, gen_args);
    gen->add_option("-o,--out", gen_out, "output container directory")->required();

    ConfigArgs train_args;
    std::string train_out = "runs";
    bool train_force = false;
    auto* tr = app.add_subcommand("train", "run the full configured pipeline "
                                           "(pretrain/train/finetune/evaluate)");
    add_config_options(tr, train_args);
    tr->add_option("-o,--out", train_out, "root directory for run outputs");
    tr->add_flag("-f,--force", train_force, "replace an existing run directory");

    ConfigArgs pre_args;
    std::string pre_out = "runs";
    bool pre_force = false;
    auto* pre = app.add_subcommand("pretrain", "run only the pretraining phase");
    add_config_options(pre, pre_args);
    pre->add_option("-o,--out", pre_out, "root directory for run outputs");
    pre->add_flag("-f,--force", pre_force, "replace an existing run directory");

    ConfigArgs ft_args;
    std::string ft_out = "runs";
    std::string ft_ckpt;
    auto* ft = app.add_subcommand("finetune",
                                  "fine-tune multi-step from an existing checkpoint");
    add_config_options(ft, ft_args);
    ft->add_option("-o,--out", ft_out, "root directory for run outputs");
    ft->add_option("--checkpoint", ft_ckpt, "starting checkpoint (default: the run's train.ckpt)");

    ConfigArgs ev_args;
    std::string ev_out = "runs";
    std::string ev_ckpt;
    auto* ev = app.add_subcommand("evaluate", "recompute metrics from a saved checkpoint");
    add_config_options(ev, ev_args);
    ev->add_option("-o,--out", ev_out, "root directory for run outputs");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path (default: the run's model.ckpt)");

    ConfigArgs ro_args;
    std::string ro_out = "runs";
    std::string ro_ckpt;
    int64_t ro_steps = 0;
    int64_t ro_init = -1;
    auto* ro = app.add_subcommand("rollout",
                                  "autoregressive rollout from a saved checkpoint into a "
                                  "series container");
    add_config_options(ro, ro_args);
    ro->add_option("-o,--out", ro_out, "root directory for run outputs");
    ro->add_option("--checkpoint", ro_ckpt, "checkpoint path (default: the run's model.ckpt)");
    ro->add_option("--steps", ro_steps, "number of model steps (default: largest horizon)");
    ro->add_option("--init", ro_init,
                   "time index the initial window ends at (default: first usable test index)");

    std::string mx_config, mx_key, mx_out = "runs";
    std::vector<std::string> mx_values;
    bool mx_force = false;
    auto* mx = app.add_subcommand("matrix", "one run per value of a single config key");
    mx->add_option("-c,--config", mx_config, "base experiment config (JSON)")->required();
    mx->add_option("--key", mx_key, "dotted config key to sweep")->required();
    mx->add_option("--values", mx_values, "values for the key, JSON scalars in text form")
        ->required();
    mx->add_option("-o,--out", mx_out, "root directory for run outputs");
    mx->add_flag("-f,--force", mx_force, "replace existing run directories");

    std::vector<std::string> cp_dirs;
    std::string cp_out, cp_default;
    auto* cp = app.add_subcommand("compare", "merge finished runs into one table and figures");
    cp->add_option("dirs", cp_dirs, "run directories")->required();
    cp->add_option("-o,--out", cp_out, "output directory for merged.csv and figures")->required();
    cp->add_option("--default", cp_default,
                   "run_id to subtract in the marginal bar charts");

    std::string pl_csv, pl_out;
    auto* pl = app.add_subcommand("plot", "re-render comparison figures from merged.csv");
    pl->add_option("--merged", pl_csv, "merged.csv produced by compare")->required();
    pl->add_option("-o,--out", pl_out, "output directory for figures")->required();

    try {
        app.parse(argc, argv);

        if (*gen) {
            wxlab::ExperimentConfig cfg = resolve_config(gen_args);
            cfg.validate();
            wxlab::WeatherSeries series = wxlab::materialize_series(cfg.dataset);
            series.validate();
            wxlab::save_series(gen_out, series);
            std::cout << "wrote " << gen_out << ": " << series.n_time() << " steps, "
                      << series.n_channels() << " channels on " << series.grid.n_lat << "x"
                      << series.grid.n_lon << "\n";
        } else if (*tr) {
            wxlab::ExperimentConfig cfg = resolve_config(train_args);
            wxlab::RunOutcome out = wxlab::run_experiment(cfg, train_out, train_force);
            std::cout << "run complete: " << out.run_dir << "\n";
            print_table(out.table);
        } else if (*pre) {
            wxlab::ExperimentConfig cfg = resolve_config(pre_args);
            wxlab::RunOutcome out = wxlab::run_pretrain_only(cfg, pre_out, pre_force);
            std::cout << "pretrain complete: " << out.run_dir << "\n";
        } else if (*ft) {
            wxlab::ExperimentConfig cfg = resolve_config(ft_args);
            wxlab::RunOutcome out = wxlab::run_finetune_from(cfg, ft_out, ft_ckpt);
            std::cout << "finetune complete: " << out.run_dir << "\n";
            print_table(out.table);
        } else if (*ev) {
            wxlab::ExperimentConfig cfg = resolve_config(ev_args);
            wxlab::RunOutcome out = wxlab::evaluate_checkpoint(cfg, ev_out, ev_ckpt);
            std::cout << "evaluation written to " << out.run_dir << "\n";
            print_table(out.table);
        } else if (*ro) {
            wxlab::ExperimentConfig cfg = resolve_config(ro_args);
            const std::string dir =
                wxlab::rollout_checkpoint(cfg, ro_out, ro_steps, ro_init, ro_ckpt);
            std::cout << "rollout written to " << dir << "/rollout\n";
        } else if (*mx) {
            std::ifstream is(mx_config);
            if (!is) throw wxlab::IoError("cannot open config file: " + mx_config);
            std::stringstream buf;
            buf << is.rdbuf();
            const std::vector<std::string> dirs =
                wxlab::run_matrix(buf.str(), mx_key, mx_values, mx_out, mx_force);
            for (const auto& d : dirs) std::cout << d << "\n";
        } else if (*cp) {
            wxlab::compare_runs(cp_dirs, cp_out, cp_default);
            std::cout << "comparison written to " << cp_out << "\n";
        } else if (*pl) {
            wxlab::plot_merged(pl_csv, pl_out);
            std::cout << "figures written to " << pl_out << "\n";
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "error:usage: " << e.what() << "\n";
        return e.get_exit_code();
    } catch (const wxlab::ConfigError& e) {
        std::cerr << "error:config: " << e.what() << "\n";
        return 2;
    } catch (const wxlab::IoError& e) {
        std::cerr << "error:io: " << e.what() << "\n";
        return 3;
    } catch (const wxlab::ValidationError& e) {
        std::cerr << "error:validation: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error:validation: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error:runtime: " << e.what() << "\n";
        return 5;
    }
}

// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "wxlab/experiments.hpp"
#include "wxlab/svgplot.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;

namespace wxlab {

namespace {

[[noreturn]] void cfg_fail(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (allowed.count(it.key()) == 0) {
            cfg_fail(where + ": unknown key '" + it.key() + "'");
        }
    }
}

const json& need(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) cfg_fail(where + ": missing required key '" + key + "'");
    return obj.at(key);
}

std::string need_str(const json& obj, const char* key, const std::string& where) {
    const json& v = need(obj, key, where);
    if (!v.is_string()) cfg_fail(where + "." + key + " must be a string");
    return v.get<std::string>();
}

int64_t as_int(const json& v, const std::string& what) {
    if (!v.is_number_integer()) cfg_fail(what + " must be an integer");
    return v.get<int64_t>();
}

int64_t opt_int(const json& obj, const char* key, int64_t dflt, const std::string& where) {
    if (!obj.contains(key)) return dflt;
    return as_int(obj.at(key), where + "." + key);
}

uint64_t opt_seed(const json& obj, const char* key, uint64_t dflt, const std::string& where) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<int64_t>() < 0 &&
                                   !v.is_number_unsigned())) {
        cfg_fail(where + "." + key + " must be a nonnegative integer");
    }
    return v.get<uint64_t>();
}

double opt_num(const json& obj, const char* key, double dflt, const std::string& where) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (!v.is_number()) cfg_fail(where + "." + key + " must be a number");
    return v.get<double>();
}

bool opt_bool(const json& obj, const char* key, bool dflt, const std::string& where) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (!v.is_boolean()) cfg_fail(where + "." + key + " must be a boolean");
    return v.get<bool>();
}

std::string opt_str(const json& obj, const char* key, const std::string& dflt,
                    const std::string& where) {
    if (!obj.contains(key)) return dflt;
    const json& v = obj.at(key);
    if (!v.is_string()) cfg_fail(where + "." + key + " must be a string");
    return v.get<std::string>();
}

bool need_bool(const json& obj, const char* key, const std::string& where) {
    const json& v = need(obj, key, where);
    if (!v.is_boolean()) cfg_fail(where + "." + key + " must be a boolean");
    return v.get<bool>();
}

template <typename F>
auto parsed(F&& f, const std::string& what) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        cfg_fail(what + ": " + e.what());
    }
}

std::string sanitize_id(const std::string& s) {
    std::string out;
    for (char c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
                        c == '-';
        out += ok ? c : '-';
    }
    return out;
}

std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        cfg_fail(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) cfg_fail("config root must be a JSON object");
    check_keys(doc,
               {"run_id", "label", "seed", "dataset", "model", "formulation", "loss", "extras",
                "noise", "optim", "horizon_steps", "horizons", "statics", "pretrain", "finetune",
                "init_checkpoint"},
               "config");

    ExperimentConfig cfg;
    cfg.run_id = need_str(doc, "run_id", "config");
    cfg.label = opt_str(doc, "label", cfg.run_id, "config");
    cfg.seed = opt_seed(doc, "seed", 0, "config");

    const json& ds = need(doc, "dataset", "config");
    if (!ds.is_object()) cfg_fail("config.dataset must be an object");
    check_keys(ds, {"synthetic", "path", "train_frac", "val_frac"}, "dataset");
    const bool has_syn = ds.contains("synthetic"), has_path = ds.contains("path");
    if (has_syn == has_path) {
        cfg_fail("dataset needs exactly one of 'synthetic' or 'path'");
    }
    cfg.dataset.is_synthetic = has_syn;
    if (has_syn) {
        const json& sy = ds.at("synthetic");
        if (!sy.is_object()) cfg_fail("dataset.synthetic must be an object");
        check_keys(sy,
                   {"kind", "n_lat", "n_lon", "n_time", "n_channels", "dt_seconds",
                    "start_timestamp", "seed", "shift_columns", "noise_amplitude"},
                   "dataset.synthetic");
        SyntheticRecipe& r = cfg.dataset.synthetic;
        r.kind = need_str(sy, "kind", "dataset.synthetic");
        r.n_lat = opt_int(sy, "n_lat", r.n_lat, "dataset.synthetic");
        r.n_lon = opt_int(sy, "n_lon", r.n_lon, "dataset.synthetic");
        r.n_time = opt_int(sy, "n_time", r.n_time, "dataset.synthetic");
        r.n_channels = opt_int(sy, "n_channels", r.n_channels, "dataset.synthetic");
        r.dt_seconds = opt_int(sy, "dt_seconds", r.dt_seconds, "dataset.synthetic");
        r.start_timestamp = opt_int(sy, "start_timestamp", r.start_timestamp, "dataset.synthetic");
        r.seed = opt_seed(sy, "seed", r.seed, "dataset.synthetic");
        r.shift_columns = opt_int(sy, "shift_columns", r.shift_columns, "dataset.synthetic");
        r.noise_amplitude = opt_num(sy, "noise_amplitude", r.noise_amplitude, "dataset.synthetic");
    } else {
        cfg.dataset.path = need_str(ds, "path", "dataset");
    }
    cfg.dataset.train_frac = opt_num(ds, "train_frac", cfg.dataset.train_frac, "dataset");
    cfg.dataset.val_frac = opt_num(ds, "val_frac", cfg.dataset.val_frac, "dataset");

    const json& mo = need(doc, "model", "config");
    if (!mo.is_object()) cfg_fail("config.model must be an object");
    check_keys(mo, {"type", "n_blocks", "base_width", "padding", "latent_width", "k",
                    "kernel_width"},
               "model");
    cfg.model.type = need_str(mo, "type", "model");
    cfg.model.n_blocks = opt_int(mo, "n_blocks", cfg.model.n_blocks, "model");
    cfg.model.base_width = opt_int(mo, "base_width", cfg.model.base_width, "model");
    if (mo.contains("padding")) {
        const json& pa = mo.at("padding");
        if (!pa.is_object()) cfg_fail("model.padding must be an object");
        check_keys(pa, {"x_mode", "y_mode"}, "model.padding");
        cfg.model.padding.x_mode = parsed(
            [&] { return parse_pad_x(opt_str(pa, "x_mode", "circular", "model.padding")); },
            "model.padding.x_mode");
        cfg.model.padding.y_mode = parsed(
            [&] { return parse_pad_y(opt_str(pa, "y_mode", "zero", "model.padding")); },
            "model.padding.y_mode");
    }
    cfg.model.latent_width = opt_int(mo, "latent_width", cfg.model.latent_width, "model");
    cfg.model.k = opt_int(mo, "k", cfg.model.k, "model");
    cfg.model.kernel_width = opt_int(mo, "kernel_width", cfg.model.kernel_width, "model");

    cfg.formulation = parsed([&] { return parse_formulation(need_str(doc, "formulation",
                                                                     "config")); },
                             "config.formulation");

    const json& lo = need(doc, "loss", "config");
    if (!lo.is_object()) cfg_fail("config.loss must be an object");
    check_keys(lo, {"kind", "huber_delta", "l1_weight"}, "loss");
    cfg.loss.kind = parsed([&] { return parse_loss_kind(need_str(lo, "kind", "loss")); },
                           "loss.kind");
    cfg.loss.huber_delta = opt_num(lo, "huber_delta", cfg.loss.huber_delta, "loss");
    cfg.loss.l1_weight = opt_num(lo, "l1_weight", cfg.loss.l1_weight, "loss");

    const json& ex = need(doc, "extras", "config");
    if (!ex.is_object()) cfg_fail("config.extras must be an object");
    check_keys(ex, {"n_input_steps", "zenith", "coords", "masks"}, "extras");
    cfg.extras.n_input_steps = as_int(need(ex, "n_input_steps", "extras"),
                                      "extras.n_input_steps");
    cfg.extras.zenith = need_bool(ex, "zenith", "extras");
    cfg.extras.coords = need_bool(ex, "coords", "extras");
    cfg.extras.masks.clear();
    if (ex.contains("masks")) {
        const json& ms = ex.at("masks");
        if (!ms.is_array()) cfg_fail("extras.masks must be an array of strings");
        for (const auto& m : ms) {
            if (!m.is_string()) cfg_fail("extras.masks must be an array of strings");
            cfg.extras.masks.push_back(m.get<std::string>());
        }
    }

    if (doc.contains("noise")) {
        const json& no = doc.at("noise");
        if (!no.is_object()) cfg_fail("config.noise must be an object");
        check_keys(no, {"kind", "amplitude", "lattice_lat", "lattice_lon", "octaves",
                        "persistence", "seed"},
                   "noise");
        cfg.noise.kind = parsed([&] { return parse_noise_kind(need_str(no, "kind", "noise")); },
                                "noise.kind");
        cfg.noise.amplitude = opt_num(no, "amplitude", cfg.noise.amplitude, "noise");
        cfg.noise.lattice_lat = opt_int(no, "lattice_lat", cfg.noise.lattice_lat, "noise");
        cfg.noise.lattice_lon = opt_int(no, "lattice_lon", cfg.noise.lattice_lon, "noise");
        cfg.noise.octaves = opt_int(no, "octaves", cfg.noise.octaves, "noise");
        cfg.noise.persistence = opt_num(no, "persistence", cfg.noise.persistence, "noise");
        cfg.noise.seed = opt_seed(no, "seed", cfg.noise.seed, "noise");
    }

    if (doc.contains("optim")) {
        const json& op = doc.at("optim");
        if (!op.is_object()) cfg_fail("config.optim must be an object");
        check_keys(op, {"lr", "weight_decay", "epochs", "batch_size", "seed"}, "optim");
        cfg.optim.lr = opt_num(op, "lr", cfg.optim.lr, "optim");
        cfg.optim.weight_decay = opt_num(op, "weight_decay", cfg.optim.weight_decay, "optim");
        cfg.optim.epochs = opt_int(op, "epochs", cfg.optim.epochs, "optim");
        cfg.optim.batch_size = opt_int(op, "batch_size", cfg.optim.batch_size, "optim");
        cfg.optim.seed = opt_seed(op, "seed", cfg.optim.seed, "optim");
    }

    cfg.horizon_steps = opt_int(doc, "horizon_steps", cfg.horizon_steps, "config");
    if (doc.contains("horizons")) {
        const json& hs = doc.at("horizons");
        if (!hs.is_array() || hs.empty()) cfg_fail("config.horizons must be a nonempty array");
        cfg.horizons.clear();
        for (const auto& h : hs) cfg.horizons.push_back(as_int(h, "config.horizons entry"));
    }

    if (doc.contains("statics")) {
        const json& st = doc.at("statics");
        if (!st.is_object()) cfg_fail("config.statics must be an object");
        check_keys(st, {"path", "seed"}, "statics");
        cfg.statics.path = opt_str(st, "path", "", "statics");
        cfg.statics.seed = opt_seed(st, "seed", 0, "statics");
    }

    if (doc.contains("pretrain")) {
        const json& pt = doc.at("pretrain");
        if (!pt.is_object()) cfg_fail("config.pretrain must be an object");
        check_keys(pt, {"objective", "mask_ratio", "dae_noise_std", "epochs"}, "pretrain");
        cfg.pretrain.enabled = true;
        cfg.pretrain.cfg.objective = parsed(
            [&] { return parse_pretrain_objective(need_str(pt, "objective", "pretrain")); },
            "pretrain.objective");
        cfg.pretrain.cfg.mask_ratio = opt_num(pt, "mask_ratio", 0.5, "pretrain");
        cfg.pretrain.cfg.dae_noise_std = opt_num(pt, "dae_noise_std", 0.1, "pretrain");
        cfg.pretrain.epochs = opt_int(pt, "epochs", 0, "pretrain");
    }

    if (doc.contains("finetune")) {
        const json& ft = doc.at("finetune");
        if (!ft.is_object()) cfg_fail("config.finetune must be an object");
        check_keys(ft, {"stage_steps", "supervision", "discount", "scheduled_sampling",
                        "epochs_per_stage"},
                   "finetune");
        cfg.finetune.enabled = true;
        if (ft.contains("stage_steps")) {
            const json& ss = ft.at("stage_steps");
            if (!ss.is_array() || ss.empty()) {
                cfg_fail("finetune.stage_steps must be a nonempty array");
            }
            cfg.finetune.cfg.stage_steps.clear();
            for (const auto& s : ss) {
                cfg.finetune.cfg.stage_steps.push_back(as_int(s, "finetune.stage_steps entry"));
            }
        }
        cfg.finetune.cfg.supervision = opt_str(ft, "supervision", "intermediate", "finetune");
        cfg.finetune.cfg.discount = opt_num(ft, "discount", 0.9, "finetune");
        cfg.finetune.cfg.scheduled_sampling =
            opt_bool(ft, "scheduled_sampling", false, "finetune");
        cfg.finetune.cfg.epochs_per_stage = opt_int(ft, "epochs_per_stage", 10, "finetune");
    }

    if (doc.contains("init_checkpoint")) {
        const json& ic = doc.at("init_checkpoint");
        if (!ic.is_object()) cfg_fail("config.init_checkpoint must be an object");
        check_keys(ic, {"path", "reinit_heads"}, "init_checkpoint");
        cfg.init_checkpoint.enabled = true;
        cfg.init_checkpoint.path = need_str(ic, "path", "init_checkpoint");
        cfg.init_checkpoint.reinit_heads = opt_bool(ic, "reinit_heads", false, "init_checkpoint");
    }

    return cfg;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError(m); };
    if (run_id.empty()) fail("run_id must be nonempty");
    for (char c : run_id) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) {
            fail("run_id may only contain letters, digits, '_', '.', '-'");
        }
    }
    if (dataset.is_synthetic) {
        const SyntheticRecipe& r = dataset.synthetic;
        static const std::set<std::string> kinds = {"solid_rotation_advection", "diffusive_waves",
                                                    "persistence_plus_noise"};
        if (kinds.count(r.kind) == 0) fail("unknown synthetic kind '" + r.kind + "'");
        if (r.n_lat < 1 || r.n_lon < 2) fail("synthetic grid must have n_lat >= 1, n_lon >= 2");
        if (r.n_time < 2) fail("synthetic series needs n_time >= 2");
        if (r.n_channels < 1) fail("synthetic series needs n_channels >= 1");
        if (r.dt_seconds < 1) fail("synthetic dt_seconds must be positive");
    } else if (dataset.path.empty()) {
        fail("dataset.path must be nonempty");
    }
    if (!(dataset.train_frac > 0.0) || !(dataset.val_frac >= 0.0) ||
        dataset.train_frac + dataset.val_frac >= 1.0) {
        fail("dataset fractions must satisfy train > 0, val >= 0, train + val < 1");
    }
    if (model.type != "unet" && model.type != "graph_unet") {
        fail("model.type must be unet or graph_unet");
    }
    try {
        UNetConfig u;
        u.n_blocks = model.n_blocks;
        u.base_width = model.base_width;
        u.in_channels = 1;
        u.out_channels = 1;
        u.padding = model.padding;
        u.validate();
        if (model.type == "graph_unet") {
            GraphUNetConfig g;
            g.core = u;
            g.in_channels = 1;
            g.out_channels = 1;
            g.latent_width = model.latent_width;
            g.k = model.k;
            g.kernel_width = model.kernel_width;
            g.validate();
        }
        loss.validate();
        noise.validate();
        optim.validate();
        if (pretrain.enabled) pretrain.cfg.validate();
        if (finetune.enabled) finetune.cfg.validate();
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    if (extras.n_input_steps < 1) fail("extras.n_input_steps must be >= 1");
    if (statics.path.empty()) {
        for (const auto& m : extras.masks) {
            if (m != "topography" && m != "soil_type" && m != "land_sea") {
                fail("mask '" + m + "' is not synthesizable; provide statics.path");
            }
        }
    }
    if (horizon_steps < 1) fail("horizon_steps must be >= 1");
    if (horizons.empty()) fail("horizons must be nonempty");
    for (int64_t h : horizons) {
        if (h < 1) fail("horizons entries must be >= 1");
    }
    if (pretrain.enabled && pretrain.epochs < 0) fail("pretrain.epochs must be >= 0");
    if (init_checkpoint.enabled && init_checkpoint.path.empty()) {
        fail("init_checkpoint.path must be nonempty");
    }
}

namespace {

json resolved_json(const ExperimentConfig& cfg) {
    json j;
    j["run_id"] = cfg.run_id;
    j["label"] = cfg.label;
    j["seed"] = cfg.seed;
    json ds;
    if (cfg.dataset.is_synthetic) {
        const SyntheticRecipe& r = cfg.dataset.synthetic;
        ds["synthetic"] = {{"kind", r.kind},
                           {"n_lat", r.n_lat},
                           {"n_lon", r.n_lon},
                           {"n_time", r.n_time},
                           {"n_channels", r.n_channels},
                           {"dt_seconds", r.dt_seconds},
                           {"start_timestamp", r.start_timestamp},
                           {"seed", r.seed},
                           {"shift_columns", r.shift_columns},
                           {"noise_amplitude", r.noise_amplitude}};
    } else {
        ds["path"] = cfg.dataset.path;
    }
    ds["train_frac"] = cfg.dataset.train_frac;
    ds["val_frac"] = cfg.dataset.val_frac;
    j["dataset"] = ds;
    j["model"] = {{"type", cfg.model.type},
                  {"n_blocks", cfg.model.n_blocks},
                  {"base_width", cfg.model.base_width},
                  {"padding",
                   {{"x_mode", pad_x_name(cfg.model.padding.x_mode)},
                    {"y_mode", pad_y_name(cfg.model.padding.y_mode)}}},
                  {"latent_width", cfg.model.latent_width},
                  {"k", cfg.model.k},
                  {"kernel_width", cfg.model.kernel_width}};
    j["formulation"] = formulation_name(cfg.formulation);
    j["loss"] = {{"kind", loss_kind_name(cfg.loss.kind)},
                 {"huber_delta", cfg.loss.huber_delta},
                 {"l1_weight", cfg.loss.l1_weight}};
    j["extras"] = {{"n_input_steps", cfg.extras.n_input_steps},
                   {"zenith", cfg.extras.zenith},
                   {"coords", cfg.extras.coords},
                   {"masks", cfg.extras.masks}};
    j["noise"] = {{"kind", noise_kind_name(cfg.noise.kind)},
                  {"amplitude", cfg.noise.amplitude},
                  {"lattice_lat", cfg.noise.lattice_lat},
                  {"lattice_lon", cfg.noise.lattice_lon},
                  {"octaves", cfg.noise.octaves},
                  {"persistence", cfg.noise.persistence},
                  {"seed", cfg.noise.seed}};
    j["optim"] = {{"lr", cfg.optim.lr},
                  {"weight_decay", cfg.optim.weight_decay},
                  {"epochs", cfg.optim.epochs},
                  {"batch_size", cfg.optim.batch_size},
                  {"seed", cfg.optim.seed}};
    j["horizon_steps"] = cfg.horizon_steps;
    j["horizons"] = cfg.horizons;
    j["statics"] = {{"path", cfg.statics.path}, {"seed", cfg.statics.seed}};
    if (cfg.pretrain.enabled) {
        j["pretrain"] = {{"objective", pretrain_objective_name(cfg.pretrain.cfg.objective)},
                         {"mask_ratio", cfg.pretrain.cfg.mask_ratio},
                         {"dae_noise_std", cfg.pretrain.cfg.dae_noise_std},
                         {"epochs", cfg.pretrain.epochs}};
    }
    if (cfg.finetune.enabled) {
        j["finetune"] = {{"stage_steps", cfg.finetune.cfg.stage_steps},
                         {"supervision", cfg.finetune.cfg.supervision},
                         {"discount", cfg.finetune.cfg.discount},
                         {"scheduled_sampling", cfg.finetune.cfg.scheduled_sampling},
                         {"epochs_per_stage", cfg.finetune.cfg.epochs_per_stage}};
    }
    if (cfg.init_checkpoint.enabled) {
        j["init_checkpoint"] = {{"path", cfg.init_checkpoint.path},
                                {"reinit_heads", cfg.init_checkpoint.reinit_heads}};
    }
    return j;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string canonical_config_json(const ExperimentConfig& cfg) {
    return resolved_json(cfg).dump(2) + "\n";
}

uint64_t config_hash(const ExperimentConfig& cfg) {
    json j = resolved_json(cfg);
    j.erase("run_id");
    j.erase("label");
    return fnv1a(j.dump());
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(config_hash(cfg)));
    return std::string(buf);
}

std::string override_config_text(const std::string& json_text, const std::string& dotted_key,
                                 const std::string& value) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        cfg_fail(std::string("config is not valid JSON: ") + e.what());
    }
    if (dotted_key.empty()) cfg_fail("override key must be nonempty");

    std::vector<std::string> parts;
    std::stringstream ss(dotted_key);
    std::string seg;
    while (std::getline(ss, seg, '.')) {
        if (seg.empty()) cfg_fail("override key '" + dotted_key + "' has an empty segment");
        parts.push_back(seg);
    }

    json* cur = &doc;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*cur)[parts[i]];
        if (!next.is_object() && !next.is_null()) {
            cfg_fail("override key '" + dotted_key + "' descends into a non-object");
        }
        cur = &next;
    }
    json v;
    try {
        v = json::parse(value);
    } catch (const json::exception&) {
        v = value;  // plain string
    }
    (*cur)[parts.back()] = v;
    return doc.dump();
}

std::string apply_env_overrides(std::string json_text) {
    for (char** e = environ; *e != nullptr; ++e) {
        const std::string entry(*e);
        if (entry.rfind("WXLAB_", 0) != 0) continue;
        const size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string name = entry.substr(6, eq - 6);
        const std::string value = entry.substr(eq + 1);
        // FOO__BAR -> foo.bar
        std::string key;
        for (size_t i = 0; i < name.size(); ++i) {
            if (name[i] == '_' && i + 1 < name.size() && name[i + 1] == '_') {
                key += '.';
                ++i;
            } else {
                key += static_cast<char>(std::tolower(static_cast<unsigned char>(name[i])));
            }
        }
        json_text = override_config_text(json_text, key, value);
    }
    return json_text;
}

ExperimentConfig load_experiment_config(const std::string& path, bool apply_env) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    std::string text = buf.str();
    if (apply_env) text = apply_env_overrides(text);
    return parse_experiment_config(text);
}

WeatherSeries materialize_series(const DatasetSpec& spec) {
    if (spec.is_synthetic) return generate_synthetic(spec.synthetic);
    try {
        return load_series(spec.path);
    } catch (const std::exception& e) {
        throw IoError("failed to load dataset from '" + spec.path + "': " + e.what());
    }
}

StaticChannelSet materialize_statics(const ExperimentConfig& cfg, const GridSpec& grid) {
    try {
        return make_static_channels(grid, cfg.extras.masks, cfg.statics.path, cfg.statics.seed);
    } catch (const std::exception& e) {
        if (!cfg.statics.path.empty()) {
            throw IoError("failed to load static masks from '" + cfg.statics.path + "': " +
                          e.what());
        }
        throw;
    }
}

std::unique_ptr<Model> build_model(const ModelSpec& spec, int64_t in_channels,
                                   int64_t out_channels, const GridSpec& grid, uint64_t seed) {
    const uint64_t model_seed = Rng(seed).fork(0x0DE1).seed();
    if (spec.type == "unet") {
        UNetConfig u;
        u.n_blocks = spec.n_blocks;
        u.base_width = spec.base_width;
        u.in_channels = in_channels;
        u.out_channels = out_channels;
        u.padding = spec.padding;
        return std::make_unique<UNet>(u, model_seed);
    }
    if (spec.type == "graph_unet") {
        GraphUNetConfig g;
        g.core.n_blocks = spec.n_blocks;
        g.core.base_width = spec.base_width;
        g.core.padding = spec.padding;
        g.in_channels = in_channels;
        g.out_channels = out_channels;
        g.latent_width = spec.latent_width;
        g.k = spec.k;
        g.kernel_width = spec.kernel_width;
        return std::make_unique<GraphUNet>(g, grid, model_seed);
    }
    throw ValidationError("model.type must be unet or graph_unet");
}

namespace {

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << content;
    if (!os) throw IoError("short write on " + path.string());
}

void write_status(const fs::path& dir, const std::string& state, bool partial,
                  const std::string& hash, const std::string& error = "") {
    json s;
    s["state"] = state;
    s["partial"] = partial;
    s["config_hash"] = hash;
    if (!error.empty()) s["error"] = error;
    write_text_file(dir / "status.json", s.dump(2) + "\n");
}

bool model_skips_enabled(Model& model) {
    if (auto* u = dynamic_cast<UNet*>(&model)) return u->use_skips();
    if (auto* g = dynamic_cast<GraphUNet*>(&model)) return g->core().use_skips();
    return true;
}

// Everything a phase needs, realized once per run.
struct Pipeline {
    ExperimentConfig cfg;
    fs::path dir;
    std::string hash;
    WeatherSeries raw;
    SplitRanges splits;
    ChannelSchema stats;
    WeatherSeries norm;
    StaticChannelSet statics;
    std::unique_ptr<Model> model;
    TrainTask task;
    std::ostringstream loss_csv;
    std::ostringstream val_csv;
    std::string load_report;
};

std::string checkpoint_meta(const Pipeline& p, const char* phase) {
    json m;
    m["phase"] = phase;
    m["config_hash"] = p.hash;
    m["model_type"] = p.cfg.model.type;
    m["use_skips"] = model_skips_enabled(*p.model);
    m["channels"] = json::array();
    for (const auto& ch : p.stats.channels) {
        m["channels"].push_back({{"name", ch.name}, {"mean", ch.mean}, {"std", ch.std}});
    }
    return m.dump();
}

void append_history(Pipeline& p, const char* phase, const TrainResult& r) {
    for (size_t i = 0; i < r.loss_history.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", r.loss_history[i]);
        p.loss_csv << phase << "," << i << "," << buf << "\n";
    }
    for (size_t i = 0; i < r.val_mse.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", r.val_mse[i]);
        p.val_csv << phase << "," << (i + 1) << "," << buf << "\n";
    }
}

Pipeline prepare_pipeline(const ExperimentConfig& cfg, const std::string& out_root, bool force,
                          bool wipe_existing) {
    cfg.validate();
    Pipeline p;
    p.cfg = cfg;
    p.hash = config_hash_hex(cfg);
    p.dir = fs::path(out_root) / cfg.run_id;
    if (fs::exists(p.dir)) {
        if (!force) {
            throw IoError("run directory '" + p.dir.string() +
                          "' already exists; pass --force to replace it");
        }
        if (wipe_existing) fs::remove_all(p.dir);
    }
    fs::create_directories(p.dir);
    write_text_file(p.dir / "config.json", canonical_config_json(cfg));
    write_text_file(p.dir / "config_hash.txt", p.hash + "\n");
    write_status(p.dir, "running", true, p.hash);

    p.raw = materialize_series(cfg.dataset);
    p.raw.validate();
    p.splits = make_splits(p.raw.n_time(), cfg.dataset.train_frac, cfg.dataset.val_frac);
    p.stats = compute_normalization(p.raw, p.splits.train_begin, p.splits.train_end);
    p.norm = normalize(p.raw, p.stats);
    p.statics = materialize_statics(cfg, p.raw.grid);

    const int64_t div = int64_t{1} << (cfg.model.n_blocks - 1);
    if (p.raw.grid.n_lat % div != 0 || p.raw.grid.n_lon % div != 0) {
        throw ValidationError("grid " + std::to_string(p.raw.grid.n_lat) + "x" +
                              std::to_string(p.raw.grid.n_lon) +
                              " is not divisible by 2^(n_blocks-1) = " + std::to_string(div));
    }

    const int64_t c = p.raw.n_channels();
    p.model = build_model(cfg.model, cfg.extras.input_channels(c), c, p.raw.grid, cfg.seed);
    p.task = TrainTask{cfg.formulation, cfg.loss, cfg.extras, cfg.noise, cfg.horizon_steps};
    p.task.noise.seed = cfg.noise.seed ^ cfg.seed;

    if (cfg.init_checkpoint.enabled) {
        Checkpoint ck = load_checkpoint(cfg.init_checkpoint.path);
        Rng load_rng = Rng(cfg.seed).fork(0x10AD);
        LoadReport rep =
            load_partial_checkpoint(*p.model, ck, cfg.init_checkpoint.reinit_heads, load_rng);
        p.load_report += "init from " + cfg.init_checkpoint.path + "\n" + rep.to_text() + "\n";
        write_text_file(p.dir / "load_report.txt", p.load_report);
    }
    return p;
}

HorizonTable evaluate_into_dir(Pipeline& p) {
    HorizonTable table = evaluate_horizons(*p.model, p.raw, p.stats, p.splits.test_begin,
                                           p.splits.test_end, p.cfg.horizons, p.cfg.horizon_steps,
                                           p.task.extras, p.statics, p.cfg.formulation);
    std::ofstream mf(p.dir / "metrics.csv");
    if (!mf) throw IoError("cannot write metrics.csv");
    mf << metrics_csv_header() << "\n";
    for (const auto& rep : table.reports) append_metrics_csv(mf, p.cfg.run_id, rep);

    for (const char* metric : {"acc", "rmse"}) {
        PlotCurve curve;
        curve.label = p.cfg.label;
        bool any = false;
        for (size_t i = 0; i < table.reports.size(); ++i) {
            const double v = std::string(metric) == "acc" ? table.reports[i].acc_mean
                                                          : table.reports[i].rmse_mean;
            curve.x.push_back(static_cast<double>(table.horizons[i]));
            curve.y.push_back(v);
            any = any || std::isfinite(v);
        }
        if (!any) continue;
        LinePlot plot;
        plot.title = std::string(metric) == "acc" ? "Geometric ACC" : "Geometric RMSE";
        plot.x_label = "prediction horizon (model steps)";
        plot.y_label = std::string(metric) == "acc" ? "ACC" : "RMSE";
        plot.curves.push_back(std::move(curve));
        write_line_plot((p.dir / (std::string(metric) + ".svg")).string(), plot);
    }
    return table;
}

void flush_histories(Pipeline& p) {
    write_text_file(p.dir / "loss_history.csv", "phase,step,loss\n" + p.loss_csv.str());
    write_text_file(p.dir / "val_history.csv", "phase,epoch,val_mse\n" + p.val_csv.str());
    write_text_file(p.dir / "load_report.txt",
                    p.load_report.empty() ? "no checkpoint transfer in this run\n"
                                          : p.load_report);
}

void run_pretrain_phase(Pipeline& p) {
    OptimConfig po = p.cfg.optim;
    po.seed = Rng(p.cfg.seed).fork(0x9E1).seed();
    if (p.cfg.pretrain.epochs > 0) po.epochs = p.cfg.pretrain.epochs;
    TrainResult r = pretrain(*p.model, p.norm, p.splits, p.task, p.cfg.pretrain.cfg, po,
                             p.statics);
    append_history(p, "pretrain", r);
    save_checkpoint((p.dir / "pretrain.ckpt").string(), *p.model, checkpoint_meta(p, "pretrain"));

    // Hand off through the checkpoint so the transfer path is the one that
    // real cross-run initialization uses.
    auto fresh = build_model(p.cfg.model, p.model->in_channels(), p.model->out_channels(),
                             p.raw.grid, p.cfg.seed);
    Checkpoint ck = load_checkpoint((p.dir / "pretrain.ckpt").string());
    Rng load_rng = Rng(p.cfg.seed).fork(0x10AE);
    LoadReport rep = load_partial_checkpoint(*fresh, ck, false, load_rng);
    p.load_report += "pretrain -> train transfer\n" + rep.to_text();
    if (p.cfg.pretrain.cfg.objective == PretrainObjective::autoencoder) {
        reinit_model_skips(*fresh, load_rng);
        set_model_skips(*fresh, true);
        p.load_report += "skip connections reinitialized and re-enabled for fine-tuning\n";
    }
    p.load_report += "\n";
    p.model = std::move(fresh);
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_root, bool force) {
    Pipeline p = prepare_pipeline(cfg, out_root, force, true);
    try {
        if (cfg.pretrain.enabled) run_pretrain_phase(p);

        OptimConfig to = cfg.optim;
        to.seed = Rng(cfg.seed).fork(0x7A1).seed();
        TrainResult tr = train(*p.model, p.norm, p.splits, p.task, to, p.statics);
        append_history(p, "train", tr);
        save_checkpoint((p.dir / "train.ckpt").string(), *p.model, checkpoint_meta(p, "train"));

        if (cfg.finetune.enabled) {
            OptimConfig fo = cfg.optim;
            fo.seed = Rng(cfg.seed).fork(0xF7E).seed();
            TrainResult fr = finetune_multistep(*p.model, p.norm, p.splits, p.task,
                                                cfg.finetune.cfg, fo, p.statics);
            append_history(p, "finetune", fr);
            save_checkpoint((p.dir / "finetune.ckpt").string(), *p.model,
                            checkpoint_meta(p, "finetune"));
        }
        save_checkpoint((p.dir / "model.ckpt").string(), *p.model, checkpoint_meta(p, "final"));

        RunOutcome outcome;
        outcome.run_dir = p.dir.string();
        outcome.table = evaluate_into_dir(p);
        flush_histories(p);
        write_status(p.dir, "complete", false, p.hash);
        return outcome;
    } catch (const std::exception& e) {
        flush_histories(p);
        write_status(p.dir, "failed", true, p.hash, e.what());
        throw;
    }
}

RunOutcome run_pretrain_only(const ExperimentConfig& cfg, const std::string& out_root,
                             bool force) {
    if (!cfg.pretrain.enabled) {
        throw ValidationError("config has no pretrain block; nothing to pretrain");
    }
    Pipeline p = prepare_pipeline(cfg, out_root, force, true);
    try {
        run_pretrain_phase(p);
        save_checkpoint((p.dir / "model.ckpt").string(), *p.model, checkpoint_meta(p, "pretrain"));
        flush_histories(p);
        write_status(p.dir, "complete", false, p.hash);
        return RunOutcome{p.dir.string(), {}};
    } catch (const std::exception& e) {
        flush_histories(p);
        write_status(p.dir, "failed", true, p.hash, e.what());
        throw;
    }
}

RunOutcome run_finetune_from(const ExperimentConfig& cfg, const std::string& out_root,
                             const std::string& checkpoint_path) {
    if (!cfg.finetune.enabled) {
        throw ValidationError("config has no finetune block; nothing to fine-tune");
    }
    const fs::path dir = fs::path(out_root) / cfg.run_id;
    const std::string ckpt =
        checkpoint_path.empty() ? (dir / "train.ckpt").string() : checkpoint_path;
    if (!fs::exists(ckpt)) {
        throw IoError("checkpoint '" + ckpt + "' not found; run train first");
    }
    Checkpoint ck = load_checkpoint(ckpt);

    Pipeline p = prepare_pipeline(cfg, out_root, true, false);
    try {
        Rng load_rng = Rng(cfg.seed).fork(0x10AF);
        LoadReport rep = load_partial_checkpoint(*p.model, ck, false, load_rng);
        p.load_report += "finetune init from " + ckpt + "\n" + rep.to_text() + "\n";

        OptimConfig fo = cfg.optim;
        fo.seed = Rng(cfg.seed).fork(0xF7E).seed();
        TrainResult fr = finetune_multistep(*p.model, p.norm, p.splits, p.task, cfg.finetune.cfg,
                                            fo, p.statics);
        append_history(p, "finetune", fr);
        save_checkpoint((p.dir / "finetune.ckpt").string(), *p.model,
                        checkpoint_meta(p, "finetune"));
        save_checkpoint((p.dir / "model.ckpt").string(), *p.model, checkpoint_meta(p, "final"));

        RunOutcome outcome;
        outcome.run_dir = p.dir.string();
        outcome.table = evaluate_into_dir(p);
        flush_histories(p);
        write_status(p.dir, "complete", false, p.hash);
        return outcome;
    } catch (const std::exception& e) {
        flush_histories(p);
        write_status(p.dir, "failed", true, p.hash, e.what());
        throw;
    }
}

namespace {

void load_model_into_pipeline(Pipeline& p, const std::string& checkpoint_path) {
    const std::string ckpt = checkpoint_path.empty() ? (p.dir / "model.ckpt").string()
                                                     : checkpoint_path;
    if (!fs::exists(ckpt)) throw IoError("checkpoint '" + ckpt + "' not found");
    Checkpoint ck = load_checkpoint(ckpt);
    Rng load_rng = Rng(p.cfg.seed).fork(0x10B0);
    LoadReport rep = load_partial_checkpoint(*p.model, ck, false, load_rng);
    p.load_report += "loaded " + ckpt + "\n" + rep.to_text() + "\n";
    try {
        const json meta = json::parse(ck.meta_json);
        if (meta.contains("use_skips") && meta.at("use_skips").is_boolean()) {
            set_model_skips(*p.model, meta.at("use_skips").get<bool>());
        }
    } catch (const json::exception&) {
        // metadata is advisory; a checkpoint without it keeps model defaults
    }
}

}  // namespace

RunOutcome evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& out_root,
                               const std::string& checkpoint_path) {
    Pipeline p = prepare_pipeline(cfg, out_root, true, false);
    try {
        load_model_into_pipeline(p, checkpoint_path);
        RunOutcome outcome;
        outcome.run_dir = p.dir.string();
        outcome.table = evaluate_into_dir(p);
        write_status(p.dir, "complete", false, p.hash);
        return outcome;
    } catch (const std::exception& e) {
        write_status(p.dir, "failed", true, p.hash, e.what());
        throw;
    }
}

std::string rollout_checkpoint(const ExperimentConfig& cfg, const std::string& out_root,
                               int64_t k_steps, int64_t init_time,
                               const std::string& checkpoint_path) {
    Pipeline p = prepare_pipeline(cfg, out_root, true, false);
    try {
        load_model_into_pipeline(p, checkpoint_path);

        const int64_t n = cfg.extras.n_input_steps;
        int64_t t0 = init_time >= 0 ? init_time : std::max(p.splits.test_begin, n - 1);
        if (t0 < n - 1 || t0 >= p.raw.n_time()) {
            throw ValidationError("initial time index " + std::to_string(t0) +
                                  " leaves no room for a window of " + std::to_string(n) +
                                  " input steps");
        }
        int64_t k = k_steps > 0 ? k_steps : *std::max_element(cfg.horizons.begin(),
                                                              cfg.horizons.end());

        std::vector<Tensor> window;
        std::vector<int64_t> stamps;
        for (int64_t i = t0 - n + 1; i <= t0; ++i) {
            window.push_back(p.norm.frame(i));
            stamps.push_back(p.raw.timestamps[static_cast<size_t>(i)]);
        }
        const int64_t dt_model = cfg.horizon_steps * p.raw.dt_seconds();
        RolloutResult res = rollout(*p.model, window, stamps, k, dt_model, p.raw.grid,
                                    cfg.extras, p.statics, cfg.formulation);
        res.reports = rollout_metrics(res, p.raw, p.stats);

        WeatherSeries out;
        out.grid = p.raw.grid;
        out.schema = p.stats;
        out.timestamps = res.timestamps;
        const int64_t c = p.raw.n_channels();
        out.data = Tensor::zeros({k, c, p.raw.grid.n_lat, p.raw.grid.n_lon});
        for (int64_t j = 0; j < k; ++j) {
            const Tensor denorm = denormalize_frame(res.states[static_cast<size_t>(j)], p.stats);
            std::copy(denorm.vec().begin(), denorm.vec().end(),
                      out.data.vec().begin() + j * denorm.numel());
        }
        save_series((p.dir / "rollout").string(), out);

        std::ofstream mf(p.dir / "rollout_metrics.csv");
        if (!mf) throw IoError("cannot write rollout_metrics.csv");
        mf << metrics_csv_header() << "\n";
        for (const auto& rep : res.reports) append_metrics_csv(mf, cfg.run_id, rep);

        write_status(p.dir, "complete", false, p.hash);
        return p.dir.string();
    } catch (const std::exception& e) {
        write_status(p.dir, "failed", true, p.hash, e.what());
        throw;
    }
}

std::vector<std::string> run_matrix(const std::string& base_config_text,
                                    const std::string& axis_key,
                                    const std::vector<std::string>& values,
                                    const std::string& out_root, bool force) {
    if (values.empty()) throw ValidationError("matrix needs at least one axis value");

    // Validate every point before launching any run.
    std::vector<ExperimentConfig> cfgs;
    for (const auto& v : values) {
        const std::string text = override_config_text(base_config_text, axis_key, v);
        ExperimentConfig c = parse_experiment_config(text);
        c.label = axis_key + "=" + v;
        c.run_id = sanitize_id(c.run_id + "_" + axis_key + "-" + v);
        c.validate();
        cfgs.push_back(std::move(c));
    }

    std::vector<std::string> dirs;
    for (const auto& c : cfgs) {
        dirs.push_back(run_experiment(c, out_root, force).run_dir);
    }
    return dirs;
}

namespace {

struct MergedRow {
    std::string run_id, label, channel, metric;
    int64_t horizon = 0;
    double value = 0.0;
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

void render_comparison(const std::vector<MergedRow>& rows, const fs::path& out,
                       const std::string& default_run_id) {
    // Run order of first appearance, MEAN rows only for the figures.
    std::vector<std::string> run_order;
    std::map<std::string, std::string> labels;
    for (const auto& r : rows) {
        if (labels.count(r.run_id) == 0) {
            labels[r.run_id] = r.label;
            run_order.push_back(r.run_id);
        }
    }

    for (const std::string metric : {"acc", "rmse"}) {
        LinePlot plot;
        plot.title = metric == "acc" ? "Geometric ACC" : "Geometric RMSE";
        plot.x_label = "prediction horizon (model steps)";
        plot.y_label = metric == "acc" ? "ACC" : "RMSE";
        bool any = false;
        for (const auto& run : run_order) {
            PlotCurve c;
            c.label = labels[run];
            std::map<int64_t, double> pts;
            for (const auto& r : rows) {
                if (r.run_id == run && r.metric == metric && r.channel == "MEAN") {
                    pts[r.horizon] = r.value;
                }
            }
            for (const auto& [h, v] : pts) {
                c.x.push_back(static_cast<double>(h));
                c.y.push_back(v);
                any = any || std::isfinite(v);
            }
            plot.curves.push_back(std::move(c));
        }
        if (any) write_line_plot((out / ("compare_" + metric + ".svg")).string(), plot);
    }

    if (default_run_id.empty()) return;
    if (labels.count(default_run_id) == 0) {
        throw ValidationError("default run '" + default_run_id + "' is not among the inputs");
    }

    // Largest horizon every run reports.
    std::map<int64_t, size_t> horizon_cover;
    for (const auto& run : run_order) {
        std::set<int64_t> hs;
        for (const auto& r : rows) {
            if (r.run_id == run && r.channel == "MEAN") hs.insert(r.horizon);
        }
        for (int64_t h : hs) horizon_cover[h] += 1;
    }
    int64_t pick = -1;
    for (const auto& [h, n] : horizon_cover) {
        if (n == run_order.size()) pick = std::max(pick, h);
    }
    if (pick < 0) throw ValidationError("runs share no common horizon for the marginal summary");

    auto mean_at = [&](const std::string& run, const std::string& metric) {
        for (const auto& r : rows) {
            if (r.run_id == run && r.metric == metric && r.channel == "MEAN" &&
                r.horizon == pick) {
                return r.value;
            }
        }
        return std::nan("");
    };

    for (const std::string metric : {"acc", "rmse"}) {
        const double base = mean_at(default_run_id, metric);
        BarChart chart;
        chart.title = "marginal " + metric + " vs " + labels[default_run_id] + " at horizon " +
                      std::to_string(pick);
        chart.y_label = metric + " difference";
        for (const auto& run : run_order) {
            if (run == default_run_id) continue;
            const double v = mean_at(run, metric) - base;
            if (!std::isfinite(v)) continue;
            chart.bars.push_back({labels[run], v});
        }
        if (!chart.bars.empty()) {
            write_bar_chart((out / ("marginal_" + metric + ".svg")).string(), chart);
        }
    }
}

std::vector<MergedRow> read_merged_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty merged CSV: " + path);
    const std::string expect = "run_id,label,horizon_steps,channel,metric,value";
    if (line != expect && line != expect + "\r") {
        throw IoError("merged CSV schema mismatch: expected '" + expect + "', found '" + line +
                      "'");
    }
    std::vector<MergedRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6) throw IoError("malformed merged CSV row: " + line);
        MergedRow r;
        r.run_id = f[0];
        r.label = f[1];
        r.horizon = std::stoll(f[2]);
        r.channel = f[3];
        r.metric = f[4];
        r.value = std::strtod(f[5].c_str(), nullptr);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

void compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                  const std::string& default_run_id) {
    if (run_dirs.empty()) throw ValidationError("compare needs at least one run directory");
    fs::create_directories(out_dir);

    std::vector<MergedRow> rows;
    for (const auto& dir : run_dirs) {
        std::ifstream cf(fs::path(dir) / "config.json");
        if (!cf) throw IoError("run directory '" + dir + "' has no config.json");
        json cj;
        try {
            cj = json::parse(cf);
        } catch (const json::exception& e) {
            throw IoError("bad config.json in '" + dir + "': " + e.what());
        }
        const std::string run_id = cj.value("run_id", std::string());
        const std::string label = cj.value("label", run_id);

        std::ifstream mf(fs::path(dir) / "metrics.csv");
        if (!mf) throw IoError("run directory '" + dir + "' has no metrics.csv");
        std::string line;
        if (!std::getline(mf, line)) throw IoError("empty metrics.csv in '" + dir + "'");
        if (line != metrics_csv_header() && line != metrics_csv_header() + "\r") {
            throw IoError("metrics schema mismatch in '" + dir + "': expected '" +
                          metrics_csv_header() + "', found '" + line + "'");
        }
        while (std::getline(mf, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 5) throw IoError("malformed metrics row in '" + dir + "': " + line);
            MergedRow acc{run_id, label, f[2], "acc", std::stoll(f[1]),
                          std::strtod(f[3].c_str(), nullptr)};
            MergedRow rmse{run_id, label, f[2], "rmse", std::stoll(f[1]),
                           std::strtod(f[4].c_str(), nullptr)};
            rows.push_back(std::move(acc));
            rows.push_back(std::move(rmse));
        }
    }

    std::ofstream out(fs::path(out_dir) / "merged.csv");
    if (!out) throw IoError("cannot write merged.csv");
    out << "run_id,label,horizon_steps,channel,metric,value\n";
    for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", r.value);
        out << csv_safe(r.run_id) << "," << csv_safe(r.label) << "," << r.horizon << ","
            << csv_safe(r.channel) << "," << r.metric << "," << buf << "\n";
    }
    out.close();

    render_comparison(rows, out_dir, default_run_id);
}

void plot_merged(const std::string& merged_csv, const std::string& out_dir) {
    fs::create_directories(out_dir);
    render_comparison(read_merged_csv(merged_csv), out_dir, "");
}

}  // namespace wxlab

#include "polysed/experiment.h"

#include "polysed/errors.h"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace polysed {

namespace {

std::string at_line(const YAML::Node& node) {
    const YAML::Mark mark = node.Mark();
    return mark.line >= 0 ? "line " + std::to_string(mark.line + 1) : "config";
}

[[noreturn]] void fail(const YAML::Node& node, const std::string& msg) {
    throw ConfigError("config " + at_line(node) + ": " + msg);
}

void check_keys(const YAML::Node& node, const std::string& section, const std::set<std::string>& allowed) {
    if (!node.IsMap()) {
        fail(node, section + " must be a mapping");
    }
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.contains(key)) {
            fail(kv.first, "unknown key '" + key + "' in " + section);
        }
    }
}

template <class T>
T get(const YAML::Node& node, const std::string& key) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        fail(node, "bad value for '" + key + "'");
    }
}

std::size_t get_count(const YAML::Node& node, const std::string& key) {
    const auto v = get<long long>(node, key);
    if (v < 0) {
        fail(node, "'" + key + "' must be non-negative");
    }
    return static_cast<std::size_t>(v);
}

std::pair<double, double> get_range(const YAML::Node& node, const std::string& key) {
    if (!node.IsSequence() || node.size() != 2) {
        fail(node, "'" + key + "' must be a two-element list [min, max]");
    }
    return {get<double>(node[0], key), get<double>(node[1], key)};
}

SourceKind parse_kind(const YAML::Node& node) {
    const auto s = get<std::string>(node, "kind");
    if (s == "tone") return SourceKind::tone;
    if (s == "chirp") return SourceKind::chirp;
    if (s == "noise_burst") return SourceKind::noise_burst;
    fail(node, "kind must be tone, chirp or noise_burst, got '" + s + "'");
}

void parse_synth(const YAML::Node& node, ExperimentConfig& cfg) {
    check_keys(node, "synth",
               {"dev_clips", "eval_clips", "clip_sec", "polyphony", "events_per_class", "event_sec",
                "snr_db", "min_overlap_fraction", "classes"});
    SynthSpec& s = cfg.synth;
    if (node["dev_clips"]) s.num_clips = get_count(node["dev_clips"], "dev_clips");
    if (node["eval_clips"]) cfg.eval_clips = get_count(node["eval_clips"], "eval_clips");
    if (node["clip_sec"]) s.clip_sec = get<double>(node["clip_sec"], "clip_sec");
    if (node["polyphony"]) s.polyphony = get_count(node["polyphony"], "polyphony");
    if (node["events_per_class"]) {
        const auto [lo, hi] = get_range(node["events_per_class"], "events_per_class");
        if (lo < 0 || hi < lo) fail(node["events_per_class"], "bad events_per_class range");
        s.min_events_per_class = static_cast<std::size_t>(lo);
        s.max_events_per_class = static_cast<std::size_t>(hi);
    }
    if (node["event_sec"]) {
        std::tie(s.min_event_sec, s.max_event_sec) = get_range(node["event_sec"], "event_sec");
    }
    if (node["snr_db"]) {
        std::tie(s.snr_min_db, s.snr_max_db) = get_range(node["snr_db"], "snr_db");
    }
    if (node["min_overlap_fraction"]) {
        s.min_overlap_fraction = get<double>(node["min_overlap_fraction"], "min_overlap_fraction");
    }
    if (node["classes"]) {
        const YAML::Node& classes = node["classes"];
        if (!classes.IsSequence() || classes.size() == 0) {
            fail(classes, "classes must be a non-empty list");
        }
        s.classes.clear();
        for (const auto& c : classes) {
            check_keys(c, "class", {"label", "kind", "low_hz", "high_hz"});
            if (!c["label"] || !c["kind"] || !c["low_hz"] || !c["high_hz"]) {
                fail(c, "class needs label, kind, low_hz and high_hz");
            }
            s.classes.push_back({get<std::string>(c["label"], "label"), parse_kind(c["kind"]),
                                 get<double>(c["low_hz"], "low_hz"), get<double>(c["high_hz"], "high_hz")});
        }
    }
    try {
        s.validate();
    } catch (const ConfigError& e) {
        fail(node, e.what());
    }
}

void parse_tfrs(const YAML::Node& node, ExperimentConfig& cfg) {
    if (!node.IsSequence() || node.size() == 0) {
        fail(node, "tfrs must be a non-empty list");
    }
    cfg.tfrs.clear();
    for (const auto& item : node) {
        TfrSetup setup;
        if (item.IsMap()) {
            check_keys(item, "tfr", {"name", "model"});
            if (!item["name"]) {
                fail(item, "tfr entry needs a name");
            }
            setup.name = get<std::string>(item["name"], "name");
            if (item["model"]) {
                setup.model = get<std::string>(item["model"], "model");
            }
        } else {
            setup.name = get<std::string>(item, "name");
        }
        try {
            setup.tfr = TfrConfig::parse(setup.name);
            CapsNetConfig::preset(setup.model, 1).validate(setup.tfr.num_bins());
        } catch (const Error& e) {
            fail(item, e.what());
        }
        for (const auto& other : cfg.tfrs) {
            if (other.name == setup.name) {
                fail(item, "TFR '" + setup.name + "' listed twice");
            }
        }
        cfg.tfrs.push_back(setup);
    }
}

void parse_training(const YAML::Node& node, TrainingSetup& t) {
    check_keys(node, "training", {"epochs", "patience", "batch_size", "validation_fraction"});
    if (node["epochs"]) t.epochs = get_count(node["epochs"], "epochs");
    if (node["patience"]) t.patience = get_count(node["patience"], "patience");
    if (node["batch_size"]) t.batch_size = get_count(node["batch_size"], "batch_size");
    if (node["validation_fraction"]) t.validation_fraction = get<double>(node["validation_fraction"], "validation_fraction");
    if (t.epochs == 0 || t.batch_size == 0) {
        fail(node, "epochs and batch_size must be positive");
    }
    if (!(t.validation_fraction >= 0.0 && t.validation_fraction < 1.0)) {
        fail(node, "validation_fraction must lie in [0, 1)");
    }
}

void parse_fusion(const YAML::Node& node, ExperimentConfig& cfg) {
    check_keys(node, "fusion", {"block_len", "bias_grid", "eta_grid", "max_rounds"});
    if (node["block_len"]) cfg.block_len = get_count(node["block_len"], "block_len");
    const auto grid3 = [&](const char* key, double& lo, double& hi, double& step) {
        const YAML::Node& g = node[key];
        if (!g) return;
        if (!g.IsSequence() || g.size() != 3) {
            fail(g, std::string(key) + " must be [min, max, step]");
        }
        lo = get<double>(g[0], key);
        hi = get<double>(g[1], key);
        step = get<double>(g[2], key);
    };
    grid3("bias_grid", cfg.grid.bias_min, cfg.grid.bias_max, cfg.grid.bias_step);
    grid3("eta_grid", cfg.grid.eta_min, cfg.grid.eta_max, cfg.grid.eta_step);
    if (node["max_rounds"]) cfg.grid.max_rounds = get_count(node["max_rounds"], "max_rounds");
    if (cfg.block_len == 0) {
        fail(node, "block_len must be positive");
    }
    try {
        cfg.grid.bias_values();
        cfg.grid.eta_values();
    } catch (const ConfigError& e) {
        fail(node, e.what());
    }
    if (cfg.grid.bias_min < -1.0 || cfg.grid.bias_max > 1.0 || cfg.grid.eta_min < 0.0 ||
        cfg.grid.eta_max > 1.0) {
        fail(node, "bias grid must stay in [-1, 1] and eta grid in [0, 1]");
    }
}

}  // namespace

const TfrSetup& ExperimentConfig::tfr(const std::string& name) const {
    for (const auto& t : tfrs) {
        if (t.name == name) {
            return t;
        }
    }
    throw ConfigError("TFR '" + name + "' is not listed in the config");
}

ExperimentConfig ExperimentConfig::desk_defaults() {
    ExperimentConfig cfg;
    cfg.synth = SynthSpec::desk(60, 0);
    for (const char* name : {"logmel_64", "logmel_128"}) {
        cfg.tfrs.push_back({name, "desk", TfrConfig::parse(name)});
    }
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("config line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    ExperimentConfig cfg = ExperimentConfig::desk_defaults();
    if (root.IsNull()) {
        return cfg;
    }
    try {
        check_keys(root, "config", {"seed", "output", "synth", "tfrs", "training", "fusion"});
        if (root["seed"]) cfg.seed = get<std::uint64_t>(root["seed"], "seed");
        if (root["output"]) cfg.output = get<std::string>(root["output"], "output");
        if (root["synth"]) parse_synth(root["synth"], cfg);
        if (root["tfrs"]) parse_tfrs(root["tfrs"], cfg);
        if (root["training"]) parse_training(root["training"], cfg.training);
        if (root["fusion"]) parse_fusion(root["fusion"], cfg);
    } catch (const YAML::Exception& e) {
        // Structural surprises, e.g. a list where a mapping was expected.
        const std::string where = e.mark.line >= 0 ? "line " + std::to_string(e.mark.line + 1) : "config";
        throw ConfigError("config " + where + ": " + e.msg);
    }
    for (const auto& t : cfg.tfrs) {
        try {
            CapsNetConfig::preset(t.model, cfg.synth.classes.size()).validate(t.tfr.num_bins());
        } catch (const Error& e) {
            throw ConfigError("config: TFR " + t.name + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_experiment_config(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace polysed

#pragma once

// Run configuration: a strict JSON schema covering model layout, training
// schedule, data source, and output location. Unknown keys are errors (with
// the line they appear on), every default is materialized on parse, and the
// resolved config can be re-emitted as canonical JSON that parses back to the
// same RunConfig.

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mmic/backbone.hpp"
#include "mmic/core.hpp"
#include "mmic/trainer.hpp"

namespace mmic {

struct DataConfig {
    std::string kind = "synthetic";  // "raw" | "ppm" | "synthetic"
    std::string path;                // raw: container base; ppm: image root
    std::string manifest;            // ppm only
    int synthetic_count = 2000;
    int synthetic_size = 32;
    std::array<int, 3> split_ratio{6, 2, 2};
};

struct RunConfig {
    ModelConfig model;
    TrainSchedule train;
    double weight_decay = 1e-4;
    DataConfig data;
    std::string output_dir = "run_out";
    uint64_t seed = 42;
};

inline const char* act_name(Act a) {
    switch (a) {
        case Act::relu: return "relu";
        case Act::sigmoid: return "sigmoid";
        case Act::silu: return "silu";
        case Act::gelu: return "gelu";
        case Act::softplus: return "softplus";
    }
    return "?";
}

inline Act act_from_name(const std::string& s, const std::string& field) {
    if (s == "relu") return Act::relu;
    if (s == "sigmoid") return Act::sigmoid;
    if (s == "silu") return Act::silu;
    if (s == "gelu") return Act::gelu;
    if (s == "softplus") return Act::softplus;
    throw ConfigError("config: " + field + ": unknown activation '" + s + "'");
}

namespace detail {

using json = nlohmann::json;

// 1-based line of the first occurrence of "key" in the raw text; 0 if absent.
inline int line_of_key(const std::string& text, const std::string& key) {
    const auto at = text.find("\"" + key + "\"");
    if (at == std::string::npos) return 0;
    int line = 1;
    for (size_t i = 0; i < at; ++i) line += text[i] == '\n' ? 1 : 0;
    return line;
}

inline void reject_unknown_keys(const json& obj, const std::string& scope,
                                std::initializer_list<const char*> allowed,
                                const std::string& text) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) {
            const int line = line_of_key(text, key);
            std::string msg = "config: unknown key '" + key + "'";
            if (!scope.empty()) msg += " in " + scope;
            if (line > 0) msg += " at line " + std::to_string(line);
            throw ConfigError(msg);
        }
    }
}

inline int get_int(const json& j, const std::string& field) {
    if (!j.is_number_integer()) throw ConfigError("config: " + field + " must be an integer");
    return j.get<int>();
}

inline double get_num(const json& j, const std::string& field) {
    if (!j.is_number()) throw ConfigError("config: " + field + " must be a number");
    return j.get<double>();
}

inline bool get_bool(const json& j, const std::string& field) {
    if (!j.is_boolean()) throw ConfigError("config: " + field + " must be a boolean");
    return j.get<bool>();
}

inline std::string get_str(const json& j, const std::string& field) {
    if (!j.is_string()) throw ConfigError("config: " + field + " must be a string");
    return j.get<std::string>();
}

template <size_t K>
std::array<int, K> get_int_array(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != K)
        throw ConfigError("config: " + field + " must be an array of " + std::to_string(K) +
                          " integers");
    std::array<int, K> out{};
    for (size_t i = 0; i < K; ++i) out[i] = get_int(j[i], field);
    return out;
}

inline void apply_model_keys(const json& m, ModelConfig& cfg, const std::string& text) {
    reject_unknown_keys(m, "model",
                        {"in_channels", "stage_channels", "stage_depths", "lambda", "r",
                         "ssm_state", "eca_kernel", "num_classes", "input_size",
                         "local_gate_act", "global_gate_act", "use_laef", "use_fmiam",
                         "parallel_vssm"},
                        text);
    if (m.contains("in_channels")) cfg.in_channels = get_int(m["in_channels"], "model.in_channels");
    if (m.contains("stage_channels"))
        cfg.stage_channels = get_int_array<4>(m["stage_channels"], "model.stage_channels");
    if (m.contains("stage_depths"))
        cfg.stage_depths = get_int_array<4>(m["stage_depths"], "model.stage_depths");
    if (m.contains("lambda")) cfg.lambda = get_int(m["lambda"], "model.lambda");
    if (m.contains("r")) cfg.r = get_num(m["r"], "model.r");
    if (m.contains("ssm_state")) cfg.ssm_state = get_int(m["ssm_state"], "model.ssm_state");
    if (m.contains("eca_kernel")) cfg.eca_kernel = get_int(m["eca_kernel"], "model.eca_kernel");
    if (m.contains("num_classes")) cfg.num_classes = get_int(m["num_classes"], "model.num_classes");
    if (m.contains("input_size")) cfg.input_size = get_int(m["input_size"], "model.input_size");
    if (m.contains("local_gate_act"))
        cfg.local_gate_act =
            act_from_name(get_str(m["local_gate_act"], "model.local_gate_act"), "model.local_gate_act");
    if (m.contains("global_gate_act"))
        cfg.global_gate_act = act_from_name(get_str(m["global_gate_act"], "model.global_gate_act"),
                                            "model.global_gate_act");
    if (m.contains("use_laef")) cfg.use_laef = get_bool(m["use_laef"], "model.use_laef");
    if (m.contains("use_fmiam")) cfg.use_fmiam = get_bool(m["use_fmiam"], "model.use_fmiam");
    if (m.contains("parallel_vssm"))
        cfg.parallel_vssm = get_bool(m["parallel_vssm"], "model.parallel_vssm");
}

inline void apply_train_keys(const json& t, RunConfig& cfg, const std::string& text) {
    reject_unknown_keys(t, "train",
                        {"total_epochs", "warmup_epochs", "early_stop_patience", "batch_size",
                         "base_lr", "min_lr", "weight_decay"},
                        text);
    if (t.contains("total_epochs"))
        cfg.train.total_epochs = get_int(t["total_epochs"], "train.total_epochs");
    if (t.contains("warmup_epochs"))
        cfg.train.warmup_epochs = get_int(t["warmup_epochs"], "train.warmup_epochs");
    if (t.contains("early_stop_patience"))
        cfg.train.early_stop_patience = get_int(t["early_stop_patience"], "train.early_stop_patience");
    if (t.contains("batch_size")) cfg.train.batch_size = get_int(t["batch_size"], "train.batch_size");
    if (t.contains("base_lr")) cfg.train.base_lr = get_num(t["base_lr"], "train.base_lr");
    if (t.contains("min_lr")) {
        cfg.train.min_lr = get_num(t["min_lr"], "train.min_lr");
    } else if (t.contains("base_lr")) {
        cfg.train.min_lr = cfg.train.base_lr / 100.0;
    }
    if (t.contains("weight_decay"))
        cfg.weight_decay = get_num(t["weight_decay"], "train.weight_decay");
}

inline void apply_data_keys(const json& d, DataConfig& cfg, const std::string& text) {
    reject_unknown_keys(
        d, "data", {"kind", "path", "manifest", "synthetic_count", "synthetic_size", "split"},
        text);
    if (d.contains("kind")) cfg.kind = get_str(d["kind"], "data.kind");
    if (d.contains("path")) cfg.path = get_str(d["path"], "data.path");
    if (d.contains("manifest")) cfg.manifest = get_str(d["manifest"], "data.manifest");
    if (d.contains("synthetic_count"))
        cfg.synthetic_count = get_int(d["synthetic_count"], "data.synthetic_count");
    if (d.contains("synthetic_size"))
        cfg.synthetic_size = get_int(d["synthetic_size"], "data.synthetic_size");
    if (d.contains("split")) cfg.split_ratio = get_int_array<3>(d["split"], "data.split");
}

}  // namespace detail

// Semantic validation beyond the schema; file existence is checked separately
// by validate_config_paths so configs can be built and inspected anywhere.
inline void validate_run_config(const RunConfig& cfg) {
    validate_model_cfg(cfg.model);
    validate_schedule(cfg.train);
    if (cfg.weight_decay < 0) throw ConfigError("config: train.weight_decay must be >= 0");
    const auto& d = cfg.data;
    if (d.kind != "raw" && d.kind != "ppm" && d.kind != "synthetic")
        throw ConfigError("config: data.kind must be raw, ppm, or synthetic, got '" + d.kind +
                          "'");
    if (d.kind == "raw" && d.path.empty())
        throw ConfigError("config: data.path is required for data.kind raw");
    if (d.kind == "ppm" && (d.path.empty() || d.manifest.empty()))
        throw ConfigError("config: data.path and data.manifest are required for data.kind ppm");
    if (d.kind == "synthetic") {
        if (d.synthetic_count < 2 || d.synthetic_count % 2 != 0)
            throw ConfigError("config: data.synthetic_count must be an even count >= 2");
        if (d.synthetic_size != cfg.model.input_size)
            throw ConfigError("config: data.synthetic_size " + std::to_string(d.synthetic_size) +
                              " must equal model.input_size " +
                              std::to_string(cfg.model.input_size));
        if (cfg.model.in_channels != 1)
            throw ConfigError("config: synthetic data is grayscale; set model.in_channels to 1");
    }
    for (int rcomp : d.split_ratio)
        if (rcomp <= 0) throw ConfigError("config: data.split components must be positive");
    if (cfg.output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
}

inline void validate_config_paths(const RunConfig& cfg) {
    auto need = [](const std::string& p, const std::string& what) {
        std::ifstream f(p);
        if (!f) throw ConfigError("config: " + what + " does not exist: " + p);
    };
    if (cfg.data.kind == "raw") {
        need(cfg.data.path + ".images.mmt", "data.path images container");
        need(cfg.data.path + ".labels.mmt", "data.path labels container");
    } else if (cfg.data.kind == "ppm") {
        need(cfg.data.manifest, "data.manifest");
    }
}

// Strict parse: unknown keys anywhere are errors naming the line, "variant"
// is applied before explicit model keys so the latter win.
inline RunConfig parse_config_text(const std::string& text) {
    detail::json root;
    try {
        root = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: top level must be an object");
    detail::reject_unknown_keys(
        root, "", {"variant", "model", "train", "data", "output_dir", "seed", "num_classes"},
        text);

    RunConfig cfg;
    if (root.contains("variant"))
        cfg.model = model_variant(detail::get_str(root["variant"], "variant"));
    if (root.contains("num_classes"))
        cfg.model.num_classes = detail::get_int(root["num_classes"], "num_classes");
    if (root.contains("model")) {
        if (!root["model"].is_object()) throw ConfigError("config: model must be an object");
        detail::apply_model_keys(root["model"], cfg.model, text);
    }
    if (root.contains("train")) {
        if (!root["train"].is_object()) throw ConfigError("config: train must be an object");
        detail::apply_train_keys(root["train"], cfg, text);
    }
    if (root.contains("data")) {
        if (!root["data"].is_object()) throw ConfigError("config: data must be an object");
        detail::apply_data_keys(root["data"], cfg.data, text);
    }
    if (root.contains("output_dir"))
        cfg.output_dir = detail::get_str(root["output_dir"], "output_dir");
    if (root.contains("seed")) {
        if (!root["seed"].is_number_integer() || root["seed"].get<int64_t>() < 0)
            throw ConfigError("config: seed must be a non-negative integer");
        cfg.seed = root["seed"].get<uint64_t>();
    }
    cfg.train.seed = cfg.seed;
    validate_run_config(cfg);
    return cfg;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

// Canonical JSON with every field present; parses back to the same config.
inline std::string resolved_config_text(const RunConfig& cfg) {
    detail::json j;
    j["variant"] = cfg.model.variant;
    j["model"] = {
        {"in_channels", cfg.model.in_channels},
        {"stage_channels", cfg.model.stage_channels},
        {"stage_depths", cfg.model.stage_depths},
        {"lambda", cfg.model.lambda},
        {"r", cfg.model.r},
        {"ssm_state", cfg.model.ssm_state},
        {"eca_kernel", cfg.model.eca_kernel},
        {"num_classes", cfg.model.num_classes},
        {"input_size", cfg.model.input_size},
        {"local_gate_act", act_name(cfg.model.local_gate_act)},
        {"global_gate_act", act_name(cfg.model.global_gate_act)},
        {"use_laef", cfg.model.use_laef},
        {"use_fmiam", cfg.model.use_fmiam},
        {"parallel_vssm", cfg.model.parallel_vssm},
    };
    j["train"] = {
        {"total_epochs", cfg.train.total_epochs},
        {"warmup_epochs", cfg.train.warmup_epochs},
        {"early_stop_patience", cfg.train.early_stop_patience},
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"min_lr", cfg.train.min_lr},
        {"weight_decay", cfg.weight_decay},
    };
    j["data"] = {
        {"kind", cfg.data.kind},
        {"path", cfg.data.path},
        {"manifest", cfg.data.manifest},
        {"synthetic_count", cfg.data.synthetic_count},
        {"synthetic_size", cfg.data.synthetic_size},
        {"split", cfg.data.split_ratio},
    };
    j["output_dir"] = cfg.output_dir;
    j["seed"] = cfg.seed;
    return j.dump(2) + "\n";
}

}  // namespace mmic

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "vitsvm/data.hpp"
#include "vitsvm/errors.hpp"
#include "vitsvm/model.hpp"
#include "vitsvm/optimizer.hpp"

namespace vitsvm {

enum class Precision { F32, F64 };

inline Precision parse_precision(const std::string& s)
{
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

inline std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    AdamHyper adam;
    LrSchedule schedule;
    std::uint64_t seed = 42;
    double train_fraction = 0.8;
    bool augment = true;
    Precision precision = Precision::F32;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DataConfig {
    std::string manifest;
    std::string val_manifest;  // optional; when empty the manifest is split
    Normalization normalization = Normalization::Symmetric;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct OutputConfig {
    std::string checkpoint_dir = "checkpoints";
    std::string log_path;     // defaults to <checkpoint_dir>/train_log.csv
    std::string report_path;  // final evaluation on the held-out split, optional
    bool keep_epoch_checkpoints = true;

    friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct RunConfig {
    ModelConfig model = preset_config("vit-b32");
    TrainConfig train;
    DataConfig data;
    OutputConfig output;

    void validate() const
    {
        model.validate();
        if (train.batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
        if (!(train.train_fraction > 0.0 && train.train_fraction < 1.0)) {
            throw ConfigError("train.train_fraction must lie in (0, 1)");
        }
        try {
            (void)make_adam_state(ParamStore<float>{}, train.adam);
            train.schedule.validate();
        } catch (const ParameterError& e) {
            throw ConfigError(std::string("train: ") + e.what());
        }
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& section, std::set<std::string> known)
{
    if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, _] : obj.items()) {
        if (!known.contains(key)) throw ConfigError("unknown key '" + section + "." + key + "'");
    }
}

template <class V>
void read(const nlohmann::json& obj, const char* key, V& out, const std::string& section)
{
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
    }
}

}  // namespace detail

/// Builds a RunConfig from JSON. The model preset supplies defaults that any
/// explicit model field overrides; unknown keys are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j)
{
    RunConfig cfg;
    detail::reject_unknown(j, "<root>", {"model", "train", "data", "output"});
    const nlohmann::json empty = nlohmann::json::object();
    const auto& m = j.contains("model") ? j.at("model") : empty;
    detail::reject_unknown(m, "model",
                           {"preset", "head", "image_size", "channels", "patch_size", "hidden_dim", "num_layers",
                            "num_heads", "mlp_dim", "dropout_rate", "num_classes", "ln_eps", "head_dropout",
                            "svm_hidden", "l2", "softmax_features"});
    std::string preset = "vit-b32";
    detail::read(m, "preset", preset, "model");
    cfg.model = preset_config(preset);
    auto& v = cfg.model.vit;
    detail::read(m, "image_size", v.image_size, "model");
    detail::read(m, "channels", v.channels, "model");
    detail::read(m, "patch_size", v.patch_size, "model");
    detail::read(m, "hidden_dim", v.hidden_dim, "model");
    detail::read(m, "num_layers", v.num_layers, "model");
    detail::read(m, "num_heads", v.num_heads, "model");
    detail::read(m, "mlp_dim", v.mlp_dim, "model");
    detail::read(m, "dropout_rate", v.dropout_rate, "model");
    detail::read(m, "num_classes", v.num_classes, "model");
    detail::read(m, "ln_eps", v.ln_eps, "model");
    auto& h = cfg.model.head;
    std::string head = to_string(h.kind);
    detail::read(m, "head", head, "model");
    h.kind = parse_head_kind(head);
    detail::read(m, "head_dropout", h.dropout, "model");
    detail::read(m, "svm_hidden", h.svm_hidden, "model");
    detail::read(m, "l2", h.l2, "model");
    detail::read(m, "softmax_features", h.softmax_features, "model");

    const auto& t = j.contains("train") ? j.at("train") : empty;
    detail::reject_unknown(t, "train",
                           {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "lr_factor", "lr_patience",
                            "lr_min_delta", "min_lr", "seed", "train_fraction", "loss_mode", "augment", "precision"});
    auto& tr = cfg.train;
    detail::read(t, "epochs", tr.epochs, "train");
    detail::read(t, "batch_size", tr.batch_size, "train");
    detail::read(t, "lr", tr.adam.lr, "train");
    detail::read(t, "beta1", tr.adam.beta1, "train");
    detail::read(t, "beta2", tr.adam.beta2, "train");
    detail::read(t, "eps", tr.adam.eps, "train");
    detail::read(t, "lr_factor", tr.schedule.factor, "train");
    detail::read(t, "lr_patience", tr.schedule.patience, "train");
    detail::read(t, "lr_min_delta", tr.schedule.min_delta, "train");
    detail::read(t, "min_lr", tr.schedule.min_lr, "train");
    detail::read(t, "seed", tr.seed, "train");
    detail::read(t, "train_fraction", tr.train_fraction, "train");
    detail::read(t, "augment", tr.augment, "train");
    std::string loss_mode = to_string(h.loss_mode);
    detail::read(t, "loss_mode", loss_mode, "train");
    h.loss_mode = parse_loss_mode(loss_mode);
    std::string precision = to_string(tr.precision);
    detail::read(t, "precision", precision, "train");
    tr.precision = parse_precision(precision);

    const auto& d = j.contains("data") ? j.at("data") : empty;
    detail::reject_unknown(d, "data", {"manifest", "val_manifest", "normalization"});
    detail::read(d, "manifest", cfg.data.manifest, "data");
    detail::read(d, "val_manifest", cfg.data.val_manifest, "data");
    std::string norm = to_string(cfg.data.normalization);
    detail::read(d, "normalization", norm, "data");
    cfg.data.normalization = parse_normalization(norm);

    const auto& o = j.contains("output") ? j.at("output") : empty;
    detail::reject_unknown(o, "output", {"checkpoint_dir", "log", "report", "keep_epoch_checkpoints"});
    detail::read(o, "checkpoint_dir", cfg.output.checkpoint_dir, "output");
    detail::read(o, "log", cfg.output.log_path, "output");
    detail::read(o, "report", cfg.output.report_path, "output");
    detail::read(o, "keep_epoch_checkpoints", cfg.output.keep_epoch_checkpoints, "output");

    cfg.validate();
    return cfg;
}

// Every field written explicitly, so run_config_from_json(to_json(c)) == c.
inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg)
{
    nlohmann::ordered_json j;
    const auto& v = cfg.model.vit;
    const auto& h = cfg.model.head;
    j["model"] = {{"preset", cfg.model.preset},
                  {"head", to_string(h.kind)},
                  {"image_size", v.image_size},
                  {"channels", v.channels},
                  {"patch_size", v.patch_size},
                  {"hidden_dim", v.hidden_dim},
                  {"num_layers", v.num_layers},
                  {"num_heads", v.num_heads},
                  {"mlp_dim", v.mlp_dim},
                  {"dropout_rate", v.dropout_rate},
                  {"num_classes", v.num_classes},
                  {"ln_eps", v.ln_eps},
                  {"head_dropout", h.dropout},
                  {"svm_hidden", h.svm_hidden},
                  {"l2", h.l2},
                  {"softmax_features", h.softmax_features}};
    const auto& t = cfg.train;
    j["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"lr", t.adam.lr},
                  {"beta1", t.adam.beta1},
                  {"beta2", t.adam.beta2},
                  {"eps", t.adam.eps},
                  {"lr_factor", t.schedule.factor},
                  {"lr_patience", t.schedule.patience},
                  {"lr_min_delta", t.schedule.min_delta},
                  {"min_lr", t.schedule.min_lr},
                  {"seed", t.seed},
                  {"train_fraction", t.train_fraction},
                  {"loss_mode", to_string(h.loss_mode)},
                  {"augment", t.augment},
                  {"precision", to_string(t.precision)}};
    j["data"] = {{"manifest", cfg.data.manifest},
                 {"val_manifest", cfg.data.val_manifest},
                 {"normalization", to_string(cfg.data.normalization)}};
    j["output"] = {{"checkpoint_dir", cfg.output.checkpoint_dir},
                   {"log", cfg.output.log_path},
                   {"report", cfg.output.report_path},
                   {"keep_epoch_checkpoints", cfg.output.keep_epoch_checkpoints}};
    return j;
}

/// Loads a run config file. Relative data and output paths are resolved
/// against the directory holding the config file.
inline RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    RunConfig cfg = run_config_from_json(j);
    const auto base = path.parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(cfg.data.manifest);
    resolve(cfg.data.val_manifest);
    resolve(cfg.output.checkpoint_dir);
    resolve(cfg.output.log_path);
    resolve(cfg.output.report_path);
    return cfg;
}

}  // namespace vitsvm

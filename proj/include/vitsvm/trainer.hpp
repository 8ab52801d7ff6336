#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vitsvm/checkpoint.hpp"
#include "vitsvm/config.hpp"
#include "vitsvm/data.hpp"
#include "vitsvm/metrics.hpp"
#include "vitsvm/model.hpp"
#include "vitsvm/optimizer.hpp"

namespace vitsvm {

inline constexpr const char* kEpochLogHeader = "epoch,train_loss,val_loss,val_acc,lr";

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

// %.17g keeps every double exactly, so equal logs mean equal values.
inline std::string format_epoch_log(const EpochLog& e)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g", e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr);
    return buf;
}

template <class T>
TrainingState<T> fresh_state(const RunConfig& cfg)
{
    TrainingState<T> s;
    s.config = cfg;
    Rng init_rng(mix_seed(cfg.train.seed, 0));
    s.model = init_model<T>(cfg.model, init_rng);
    s.adam = make_adam_state(s.model.params, cfg.train.adam);
    s.schedule = cfg.train.schedule;
    s.schedule.best = std::numeric_limits<double>::infinity();
    s.schedule.wait = 0;
    s.rng = Rng(mix_seed(cfg.train.seed, 1));
    return s;
}

struct EvalResult {
    double loss = 0.0;  // sample-weighted mean of the total loss
    std::vector<std::size_t> truth;
    std::vector<std::size_t> predicted;
    std::vector<std::vector<double>> probabilities;

    double accuracy() const
    {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
        return truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size());
    }
};

/// Inference-mode pass over every record of `source` in manifest order.
template <class T>
EvalResult evaluate(const Model<T>& model, ImageSource<T>& source, std::size_t batch_size)
{
    if (source.size() == 0) throw ContractError("cannot evaluate an empty manifest");
    EvalResult r;
    BatchOptions opts;
    opts.batch_size = batch_size;
    opts.num_classes = model.config.vit.num_classes;
    BatchIterator<T> it(source, opts);
    double total = 0.0;
    const ForwardContext ctx{};
    while (auto batch = it.next()) {
        Tape<T> tape(false);
        auto out = model_loss(tape, model, batch->images, batch->labels, ctx);
        total += out.loss().total * static_cast<double>(batch->size());
        const Tensor<T>& probs = out.probs.value();
        const auto pred = predict_classes(probs);
        for (std::size_t b = 0; b < batch->size(); ++b) {
            r.truth.push_back(batch->classes[b]);
            r.predicted.push_back(pred[b]);
            std::vector<double> row;
            for (std::size_t k = 0; k < probs.dim(1); ++k) row.push_back(static_cast<double>(probs.at(b, k)));
            r.probabilities.push_back(std::move(row));
        }
    }
    r.loss = total / static_cast<double>(source.size());
    return r;
}

inline std::vector<std::string> report_class_names(std::size_t num_classes)
{
    std::vector<std::string> names;
    for (std::size_t k = 0; k < num_classes; ++k) {
        names.push_back(num_classes == kNumClasses ? class_names()[k] : "class " + std::to_string(k));
    }
    return names;
}

template <class T>
EvalReport make_eval_report(const Model<T>& model, const EvalResult& r)
{
    const std::size_t k = model.config.vit.num_classes;
    const auto cm = confusion_matrix(r.truth, r.predicted, k, report_class_names(k));
    return make_report(cm, model.config.preset, to_string(model.config.head.kind));
}

struct TrainHooks {
    std::function<void(const EpochLog&)> on_epoch;
    std::ostream* progress = nullptr;
};

namespace detail {

inline std::filesystem::path epoch_checkpoint_path(const RunConfig& cfg, std::uint64_t epoch)
{
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04llu.ckpt", static_cast<unsigned long long>(epoch));
    return std::filesystem::path(cfg.output.checkpoint_dir) / name;
}

inline std::filesystem::path log_path(const RunConfig& cfg)
{
    if (!cfg.output.log_path.empty()) return cfg.output.log_path;
    return std::filesystem::path(cfg.output.checkpoint_dir) / "train_log.csv";
}

template <class T>
void write_checkpoints(const TrainingState<T>& s)
{
    const auto bytes = encode_checkpoint(s);
    if (s.config.output.keep_epoch_checkpoints) write_file_bytes(epoch_checkpoint_path(s.config, s.epoch), bytes);
    write_file_bytes(std::filesystem::path(s.config.output.checkpoint_dir) / "last.ckpt", bytes);
}

}  // namespace detail

/// Loads the train/validation manifests a run config names.
inline std::pair<Manifest, Manifest> load_run_data(const RunConfig& cfg)
{
    if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is required");
    if (!std::filesystem::exists(cfg.data.manifest)) {
        throw ConfigError("manifest '" + cfg.data.manifest + "' does not exist");
    }
    Manifest all = load_manifest(cfg.data.manifest);
    if (all.records.empty()) throw ConfigError("manifest '" + cfg.data.manifest + "' has no records");
    if (!cfg.data.val_manifest.empty()) {
        if (!std::filesystem::exists(cfg.data.val_manifest)) {
            throw ConfigError("validation manifest '" + cfg.data.val_manifest + "' does not exist");
        }
        Manifest val = load_manifest(cfg.data.val_manifest);
        if (val.records.empty()) throw ConfigError("validation manifest has no records");
        return {std::move(all), std::move(val)};
    }
    try {
        return stratified_split(all, cfg.train.train_fraction, cfg.train.seed);
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
}

/// Runs epochs state.epoch+1 .. config.train.epochs.
///
/// Each epoch: seeded shuffle, batches with augmentation, forward, loss,
/// backward, Adam; then held-out evaluation, plateau schedule, checkpoint
/// and one CSV log line. A fresh state (epoch 0) first writes its initial
/// checkpoint and a header-only log; a resumed state appends to the log.
template <class T>
std::vector<EpochLog> train(TrainingState<T>& state, const TrainHooks& hooks = {})
{
    const RunConfig& cfg = state.config;
    cfg.validate();
    if (state.model.config != cfg.model) throw ConfigError("checkpoint model config differs from the run config");
    auto [train_manifest, val_manifest] = load_run_data(cfg);
    const std::size_t image_size = cfg.model.vit.image_size;
    if (cfg.model.vit.channels != 3) {
        throw ConfigError("the image pipeline produces 3 channels, model expects " +
                          std::to_string(cfg.model.vit.channels));
    }
    ImageSource<T> train_source(std::move(train_manifest), image_size, cfg.data.normalization);
    ImageSource<T> val_source(std::move(val_manifest), image_size, cfg.data.normalization);

    std::filesystem::create_directories(cfg.output.checkpoint_dir);
    const auto log_file = detail::log_path(cfg);
    if (!log_file.parent_path().empty()) std::filesystem::create_directories(log_file.parent_path());
    const bool fresh = state.epoch == 0;
    std::ofstream log(log_file, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write log '" + log_file.string() + "'");
    if (fresh) {
        log << kEpochLogHeader << '\n' << std::flush;
        detail::write_checkpoints(state);
    }

    std::vector<EpochLog> logs;
    for (std::uint64_t epoch = state.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
        BatchOptions opts;
        opts.batch_size = cfg.train.batch_size;
        opts.shuffle = true;
        opts.training = true;
        opts.augment = cfg.train.augment;
        opts.seed = cfg.train.seed;
        opts.epoch = epoch;
        opts.num_classes = cfg.model.vit.num_classes;
        BatchIterator<T> it(train_source, opts, &state.rng);
        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        const double lr_used = state.adam.hyper.lr;
        while (auto batch = it.next()) {
            ++batch_no;
            Tape<T> tape;
            const ForwardContext ctx{true, &state.rng};
            auto out = model_loss(tape, state.model, batch->images, batch->labels, ctx);
            const double loss = out.loss().total;
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no));
            }
            const auto grads = tape.backward(out.total, state.model.params);
            adam_step(state.model.params, grads, state.adam);
            loss_sum += loss * static_cast<double>(batch->size());
            seen += batch->size();
        }
        const EvalResult val = evaluate(state.model, val_source, cfg.train.batch_size);
        if (!std::isfinite(val.loss)) {
            throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        state.adam.hyper.lr = maybe_reduce_lr(state.schedule, state.adam.hyper.lr, val.loss);
        state.epoch = epoch;
        detail::write_checkpoints(state);

        EpochLog entry{epoch, loss_sum / static_cast<double>(seen), val.loss, val.accuracy(), lr_used};
        log << format_epoch_log(entry) << '\n' << std::flush;
        if (hooks.progress) *hooks.progress << format_epoch_log(entry) << '\n';
        if (hooks.on_epoch) hooks.on_epoch(entry);
        logs.push_back(entry);
    }

    if (!cfg.output.report_path.empty()) {
        const auto report = make_eval_report(state.model, evaluate(state.model, val_source, cfg.train.batch_size));
        std::ofstream out(cfg.output.report_path);
        if (!out) throw IoError("cannot write report '" + cfg.output.report_path + "'");
        out << render_report(report, ReportFormat::Json);
    }
    return logs;
}

/// Evaluates a model on every record of a manifest.
template <class T>
EvalReport evaluate_manifest(const Model<T>& model, const Manifest& manifest, Normalization norm,
                             std::size_t batch_size = 8)
{
    if (manifest.records.empty()) throw ContractError("cannot evaluate an empty manifest");
    if (model.config.vit.channels != 3) {
        throw DimensionError("model expects " + std::to_string(model.config.vit.channels) +
                             " channels, the image pipeline produces 3");
    }
    ImageSource<T> source(manifest, model.config.vit.image_size, norm);
    return make_eval_report(model, evaluate(model, source, batch_size));
}

struct Prediction {
    std::size_t label = 0;
    std::string name;
    std::vector<double> probabilities;
};

template <class T>
Prediction predict_image(const Model<T>& model, const std::filesystem::path& image, Normalization norm)
{
    const std::size_t s = model.config.vit.image_size;
    Tensor<T> pixels = load_image<T>(image, s, norm);
    const Tensor<T> probs = model_predict(model, pixels.reshaped({1, s, s, 3}));
    Prediction p;
    p.label = predict_classes(probs)[0];
    p.name = report_class_names(model.config.vit.num_classes)[p.label];
    for (T v : probs.data()) p.probabilities.push_back(static_cast<double>(v));
    return p;
}

}  // namespace vitsvm

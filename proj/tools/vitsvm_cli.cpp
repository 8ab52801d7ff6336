// Command-line entry point: train, eval, predict, gradcheck, synth.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vitsvm/vitsvm.hpp"

namespace {

using namespace vitsvm;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

template <class T>
int run_train(const RunConfig& cfg, const std::string& resume)
{
    TrainingState<T> state;
    if (resume.empty()) {
        state = fresh_state<T>(cfg);
    } else {
        state = load_checkpoint<T>(resume);
        // Keep the resumed run's paths and epoch budget; everything else must match.
        RunConfig merged = state.config;
        merged.train.epochs = cfg.train.epochs;
        merged.data = cfg.data;
        merged.output = cfg.output;
        if (merged != cfg) throw ConfigError("config differs from the checkpoint's run config");
        state.config = merged;
    }
    for (const auto& w : load_manifest(cfg.data.manifest).warnings) std::cerr << "warning: " << w << '\n';
    std::cout << kEpochLogHeader << '\n';
    TrainHooks hooks;
    hooks.progress = &std::cout;
    train(state, hooks);
    return 0;
}

template <class T>
int run_eval(const std::string& checkpoint, const std::string& manifest_path, const std::string& out,
             const std::string& format)
{
    const auto fmt = parse_report_format(format);
    const auto state = load_checkpoint<T>(checkpoint);
    const Manifest manifest = load_manifest(manifest_path);
    for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
    if (manifest.records.empty()) throw ContractError("manifest '" + manifest_path + "' has no records");
    const auto report = evaluate_manifest(state.model, manifest, state.config.data.normalization,
                                          state.config.train.batch_size);
    const std::string text = render_report(report, fmt);
    if (out.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(out);
        if (!f) throw IoError("cannot write report '" + out + "'");
        f << text;
    }
    return 0;
}

template <class T>
int run_predict(const std::string& checkpoint, const std::string& image)
{
    const auto state = load_checkpoint<T>(checkpoint);
    const auto p = predict_image(state.model, image, state.config.data.normalization);
    nlohmann::ordered_json j;
    j["class"] = p.label;
    j["name"] = p.name;
    j["probabilities"] = p.probabilities;
    std::cout << j.dump() << '\n';
    return 0;
}

int run_gradcheck(const std::string& preset, const std::string& corrupt)
{
    bool all_passed = true;
    for (auto head : {HeadKind::DenseSoftmax, HeadKind::SvmHinge}) {
        for (auto mode : {LossMode::Probability, LossMode::Margin}) {
            ModelConfig cfg = preset_config(preset);
            cfg.head.kind = head;
            cfg.head.loss_mode = mode;
            GradcheckOptions opts;
            if (!corrupt.empty()) {
                opts.corrupt = [&](GradientMap<double>& g) {
                    auto it = g.find(corrupt);
                    if (it != g.end()) it->second[0] += 1.0;
                };
            }
            const auto r = gradcheck(cfg, opts);
            for (const auto& p : r.params) {
                std::printf("  %-24s entries=%-6zu max_rel_err=%.3e\n", p.name.c_str(), p.entries, p.max_rel_error);
            }
            std::printf("%s %s/%s max_rel_err=%.3e worst=%s\n", r.passed ? "PASS" : "FAIL", to_string(head).c_str(),
                        to_string(mode).c_str(), r.max_rel_error, r.worst_param.c_str());
            all_passed = all_passed && r.passed;
        }
    }
    return all_passed ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ViT backbone with SVM-style squared-hinge head"};
    app.require_subcommand(1);

    std::string config_path, resume;
    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--resume", resume, "checkpoint to continue from");

    std::string checkpoint, manifest, out, format = "json";
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", manifest, "manifest CSV")->required();
    eval_cmd->add_option("--out", out, "write the report here instead of stdout");
    eval_cmd->add_option("--format", format, "json, csv or text")->capture_default_str();

    std::string image;
    auto* predict_cmd = app.add_subcommand("predict", "classify one image");
    predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    predict_cmd->add_option("--image", image, "PNG or JPEG image")->required();

    std::string preset = "tiny", corrupt;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
    grad_cmd->add_option("--preset", preset, "model preset")->capture_default_str();
    grad_cmd->add_option("--corrupt", corrupt, "perturb this parameter's analytic gradient (negative control)");

    std::string out_dir;
    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "write the four-class synthetic dataset");
    synth_cmd->add_option("--out-dir", out_dir, "output directory")->required();
    synth_cmd->add_option("--per-class", synth.per_class, "images per class")->required();
    synth_cmd->add_option("--seed", synth.seed, "noise seed")->required();
    synth_cmd->add_option("--size", synth.size, "image side in pixels")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*train_cmd) {
            const RunConfig cfg = load_run_config(config_path);
            return cfg.train.precision == Precision::F32 ? run_train<float>(cfg, resume)
                                                         : run_train<double>(cfg, resume);
        }
        if (*eval_cmd) {
            return checkpoint_precision(checkpoint) == Precision::F32
                       ? run_eval<float>(checkpoint, manifest, out, format)
                       : run_eval<double>(checkpoint, manifest, out, format);
        }
        if (*predict_cmd) {
            return checkpoint_precision(checkpoint) == Precision::F32 ? run_predict<float>(checkpoint, image)
                                                                      : run_predict<double>(checkpoint, image);
        }
        if (*grad_cmd) {
            if (preset != "tiny") throw ConfigError("gradcheck supports only the tiny preset");
            return run_gradcheck(preset, corrupt);
        }
        if (*synth_cmd) {
            const auto m = generate_synthetic(out_dir, synth);
            std::cout << "wrote " << m.records.size() << " images and manifest.csv to " << out_dir << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ParameterError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

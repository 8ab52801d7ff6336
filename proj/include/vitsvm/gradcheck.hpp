#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vitsvm/model.hpp"

namespace vitsvm {

// |a - n| / max(|a|, |n|), treated as zero when |a - n| is below the absolute floor.
inline double gradient_relative_error(double analytic, double numeric, double abs_floor = 1e-7)
{
    const double diff = std::abs(analytic - numeric);
    if (diff <= abs_floor) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

struct GradcheckOptions {
    std::uint64_t seed = 7;
    std::size_t batch = 2;
    double step = 1e-4;
    double tolerance = 1e-4;
    double abs_floor = 1e-7;
    // Test hook: edits the analytic gradients before comparison.
    std::function<void(GradientMap<double>&)> corrupt;
};

struct ParamCheck {
    std::string name;
    std::size_t entries = 0;
    double max_rel_error = 0.0;
};

struct GradcheckResult {
    HeadKind head = HeadKind::SvmHinge;
    LossMode mode = LossMode::Probability;
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    std::string worst_param;
    bool passed = false;
};

/// Compares tape gradients of the full model loss with central differences
/// for every entry of every parameter, in 64-bit. The forward runs in
/// training mode with a reseeded RNG per evaluation, so dropout masks are
/// identical across all perturbed evaluations.
inline GradcheckResult gradcheck(const ModelConfig& cfg, const GradcheckOptions& opts = {})
{
    Rng rng(opts.seed);
    Model<double> model = init_model<double>(cfg, rng);
    const std::size_t s = cfg.vit.image_size, c = cfg.vit.channels, k = cfg.vit.num_classes;
    Tensor<double> images(Shape{opts.batch, s, s, c});
    for (auto& v : images.mutable_data()) v = rng.uniform(-1.0, 1.0);
    std::vector<std::size_t> labels(opts.batch);
    for (auto& l : labels) l = static_cast<std::size_t>(rng.below(k));
    const Tensor<double> targets = one_hot<double>(labels, k);
    const std::uint64_t dropout_seed = rng.next_u64();

    auto loss_at = [&](Tape<double>& tape) {
        Rng drop(dropout_seed);
        const ForwardContext ctx{true, &drop};
        return model_loss(tape, model, images, targets, ctx).total;
    };

    GradientMap<double> analytic;
    {
        Tape<double> tape;
        auto loss = loss_at(tape);
        analytic = tape.backward(loss, model.params);
    }
    if (opts.corrupt) opts.corrupt(analytic);

    auto eval = [&]() {
        Tape<double> tape(false);
        return loss_at(tape).value().item();
    };

    GradcheckResult result;
    result.head = cfg.head.kind;
    result.mode = cfg.head.loss_mode;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const std::string& name = model.params.names()[i];
        auto data = model.params.at(i).mutable_data();
        const Tensor<double>& grad = analytic.at(name);
        ParamCheck check{name, data.size(), 0.0};
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double original = data[j];
            data[j] = original + opts.step;
            const double up = eval();
            data[j] = original - opts.step;
            const double down = eval();
            data[j] = original;
            const double numeric = (up - down) / (2.0 * opts.step);
            check.max_rel_error =
                std::max(check.max_rel_error, gradient_relative_error(grad[j], numeric, opts.abs_floor));
        }
        if (check.max_rel_error >= result.max_rel_error) {
            result.max_rel_error = check.max_rel_error;
            result.worst_param = name;
        }
        result.params.push_back(check);
    }
    result.passed = result.max_rel_error < opts.tolerance;
    return result;
}

}  // namespace vitsvm

#pragma once

#include <string>

#include "vitsvm/heads.hpp"
#include "vitsvm/vit.hpp"

namespace vitsvm {

struct ModelConfig {
    std::string preset = "vit-b32";
    VitConfig vit = VitConfig::vit_b32();
    HeadConfig head;

    void validate() const
    {
        vit.validate();
        head.validate();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline ModelConfig preset_config(const std::string& name)
{
    ModelConfig cfg;
    cfg.preset = name;
    if (name == "vit-b32") cfg.vit = VitConfig::vit_b32();
    else if (name == "tiny") cfg.vit = VitConfig::tiny();
    else throw ConfigError("unknown preset '" + name + "' (expected vit-b32 or tiny)");
    return cfg;
}

// Backbone followed by head, all parameters in one store.
template <std::floating_point T>
struct Model {
    ModelConfig config;
    ParamStore<T> params;
};

template <class T>
Model<T> init_model(const ModelConfig& cfg, Rng& rng)
{
    cfg.validate();
    Model<T> model{cfg, {}};
    init_vit_params(cfg.vit, model.params, rng);
    init_head_params(cfg.head, cfg.vit.hidden_dim, cfg.vit.num_classes, model.params, rng);
    return model;
}

template <class T>
HeadOutput<T> model_loss(Tape<T>& tape, const Model<T>& model, const Tensor<T>& images, const Tensor<T>& targets,
                         const ForwardContext& ctx)
{
    auto features = vit_forward(tape, images, model.params, model.config.vit, ctx);
    return head_loss(tape, features, targets, model.params, model.config.head, ctx);
}

// Inference-mode class probabilities, B x K.
template <class T>
Tensor<T> model_predict(const Model<T>& model, const Tensor<T>& images)
{
    Tape<T> tape(false);
    const ForwardContext ctx{};
    auto features = vit_forward(tape, images, model.params, model.config.vit, ctx);
    return softmax(head_logits(tape, features, model.params, model.config.head, ctx), 1).value();
}

}  // namespace vitsvm

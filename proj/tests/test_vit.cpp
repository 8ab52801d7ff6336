#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace vitsvm;
using testutil::random_tensor;

namespace {

ModelConfig tiny_model(HeadKind head = HeadKind::SvmHinge)
{
    ModelConfig cfg = preset_config("tiny");
    cfg.head.kind = head;
    return cfg;
}

Tensor<double> image_batch(std::size_t b, const VitConfig& v, Rng& rng)
{
    return random_tensor({b, v.image_size, v.image_size, v.channels}, rng);
}

Tensor<double> image_at(const Tensor<double>& batch, std::size_t i)
{
    const std::size_t per = batch.size() / batch.dim(0);
    const auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(i * per);
    return Tensor<double>({batch.dim(1), batch.dim(2), batch.dim(3)},
                          std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
}

}  // namespace

TEST(VitConfig, Presets)
{
    const auto b32 = VitConfig::vit_b32();
    EXPECT_EQ(b32.image_size, 256u);
    EXPECT_EQ(b32.patch_size, 32u);
    EXPECT_EQ(b32.num_patches(), 64u);
    EXPECT_EQ(b32.num_tokens(), 65u);
    EXPECT_EQ(b32.patch_dim(), 3072u);
    EXPECT_EQ(b32.hidden_dim, 768u);
    EXPECT_EQ(b32.num_layers, 12u);
    EXPECT_EQ(b32.num_heads, 12u);
    EXPECT_EQ(b32.mlp_dim, 3072u);
    const auto t = VitConfig::tiny();
    EXPECT_EQ(t.num_tokens(), 17u);
    EXPECT_EQ(t.head_dim(), 8u);
}

TEST(VitConfig, ValidationErrors)
{
    auto c = VitConfig::tiny();
    c.patch_size = 5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = VitConfig::tiny();
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = VitConfig::tiny();
    c.dropout_rate = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Vit, ParamCountMatchesStore)
{
    for (auto cfg : {VitConfig::tiny(), VitConfig::vit_b32()}) {
        if (cfg.hidden_dim > 100) {
            // Count formula only; ViT-B/32 backbone has about 87.5M parameters.
            EXPECT_EQ(vit_param_count(cfg), 87'466'752u);
            continue;
        }
        ParamStore<double> store;
        Rng rng(1);
        init_vit_params(cfg, store, rng);
        EXPECT_EQ(store.element_count(), vit_param_count(cfg));
    }
}

TEST(Vit, InitializationConventions)
{
    ParamStore<double> store;
    Rng rng(2);
    init_vit_params(VitConfig::tiny(), store, rng);
    EXPECT_EQ(store.get("encoder/0/ln1_g"), Tensor<double>::ones({16}));
    EXPECT_EQ(store.get("encoder/1/mlp2_b"), Tensor<double>::zeros({16}));
    for (double v : store.get("embed/pos").data()) EXPECT_LE(std::abs(v), 0.04);
    const double lim = 1.0 / std::sqrt(48.0);
    for (double v : store.get("embed/patch_w").data()) EXPECT_LE(std::abs(v), lim);
}

TEST(Patchify, RowOrderAndInverse)
{
    Tensor<double> img(Shape{4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
    const auto p = patchify(img, 2);
    ASSERT_EQ(p.shape(), (Shape{4, 4}));
    // Patch 1 is the top-right 2x2 block.
    EXPECT_EQ(std::vector<double>(p.data().begin() + 4, p.data().begin() + 8), (std::vector<double>{2, 3, 6, 7}));
    EXPECT_EQ(unpatchify(p, 2, 1), img);
    EXPECT_THROW(patchify(img, 3), DimensionError);
}

TEST(Patchify, RandomRoundTrip)
{
    Rng rng(3);
    const auto img = random_tensor({16, 16, 3}, rng);
    EXPECT_EQ(unpatchify(patchify(img, 4), 4, 3), img);
}

TEST(Attention, HandComputedCase)
{
    ParamStore<double> store;
    const std::string pre = "encoder/0/";
    store.add(pre + "attn_q_w", Tensor<double>::matrix({{1, 0}, {0, 1}}));
    store.add(pre + "attn_k_w", Tensor<double>::matrix({{0, 1}, {1, 0}}));
    store.add(pre + "attn_v_w", Tensor<double>::matrix({{2, 0}, {0, 1}}));
    store.add(pre + "attn_o_w", Tensor<double>::matrix({{1, 0}, {0, 1}}));
    for (const char* b : {"attn_q_b", "attn_k_b", "attn_v_b", "attn_o_b"}) store.add(pre + b, Tensor<double>::zeros({2}));
    Tape<double> tape(false);
    std::vector<Tensor<double>> weights;
    auto y = multi_head_attention(tape, tape.constant(Tensor<double>::matrix({{1, 2}, {3, -1}})), store, pre, 1, &weights);
    ASSERT_EQ(weights.size(), 1u);
    const double w[] = {0.3302384506733431, 0.6697615493266569, 0.9995813993860605, 0.00041860061393960395};
    const double out[] = {4.6790461973066275, -0.00928464797997064, 2.0016744024557585, 1.9987441981581815};
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(weights[0][i], w[i], 1e-12);
        EXPECT_NEAR(y.value()[i], out[i], 1e-12);
    }
}

TEST(Attention, WeightRowsSumToOne)
{
    Rng rng(4);
    Model<double> model = init_model<double>(tiny_model(), rng);
    Tape<double> tape(false);
    std::vector<Tensor<double>> weights;
    auto tokens = tape.constant(random_tensor({17, 16}, rng, -3, 3));
    multi_head_attention(tape, tokens, model.params, "encoder/0/", 2, &weights);
    ASSERT_EQ(weights.size(), 2u);
    for (const auto& w : weights) {
        ASSERT_EQ(w.shape(), (Shape{17, 17}));
        for (std::size_t i = 0; i < 17; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 17; ++j) s += w.at(i, j);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Attention, IndivisibleHeadsIsConfigError)
{
    Rng rng(5);
    Model<double> model = init_model<double>(tiny_model(), rng);
    Tape<double> tape(false);
    EXPECT_THROW(multi_head_attention(tape, tape.constant(random_tensor({3, 16}, rng)), model.params, "encoder/0/", 3),
                 ConfigError);
}

TEST(Vit, ForwardMatchesLoopReference)
{
    Rng rng(6);
    for (auto head : {HeadKind::SvmHinge, HeadKind::DenseSoftmax}) {
        Model<double> model = init_model<double>(tiny_model(head), rng);
        // Perturb LN and bias parameters so the check does not rely on their identity init.
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            for (auto& v : model.params.at(i).mutable_data()) v += rng.uniform(-0.1, 0.1);
        }
        const auto images = image_batch(3, model.config.vit, rng);
        Tape<double> tape(false);
        const auto features = vit_forward(tape, images, model.params, model.config.vit, {}).value();
        const auto probs = model_predict(model, images);
        for (std::size_t b = 0; b < 3; ++b) {
            const auto ref = testutil::ref::backbone(image_at(images, b), model.params, model.config.vit);
            for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(features.at(b, j), ref[j], 1e-10);
            const auto p = testutil::ref::head_probs(ref, model.params, model.config.head);
            for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(probs.at(b, k), p[k], 1e-10);
        }
    }
}

TEST(Vit, OutputShapeAndWrongImageShape)
{
    Rng rng(7);
    Model<double> model = init_model<double>(tiny_model(), rng);
    Tape<double> tape(false);
    EXPECT_EQ(vit_forward(tape, image_batch(5, model.config.vit, rng), model.params, model.config.vit, {}).shape(),
              (Shape{5, 16}));
    EXPECT_THROW(vit_forward(tape, random_tensor({1, 12, 12, 3}, rng), model.params, model.config.vit, {}),
                 DimensionError);
}

TEST(Vit, InferenceIsDeterministicAndBatchIndependent)
{
    Rng rng(8);
    auto cfg = tiny_model();
    cfg.vit.dropout_rate = 0.1;
    Model<double> model = init_model<double>(cfg, rng);
    const auto images = image_batch(4, model.config.vit, rng);
    const auto all = model_predict(model, images);
    EXPECT_EQ(all, model_predict(model, images));
    for (std::size_t b = 0; b < 4; ++b) {
        const auto one = model_predict(model, image_at(images, b).reshaped({1, 16, 16, 3}));
        for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(one[k], all.at(b, k));
    }
}

TEST(Vit, PatchPermutationChangesOutput)
{
    // Position embeddings make the backbone sensitive to patch order.
    Rng rng(9);
    Model<double> model = init_model<double>(tiny_model(), rng);
    const auto img = random_tensor({16, 16, 3}, rng);
    auto patches = patchify(img, 4);
    std::vector<std::size_t> order(16);
    for (std::size_t i = 0; i < 16; ++i) order[i] = i;
    std::swap(order[0], order[5]);
    Tensor<double> permuted(patches.shape());
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 48; ++c) permuted.at(r, c) = patches.at(order[r], c);
    const auto a = model_predict(model, img.reshaped({1, 16, 16, 3}));
    const auto b = model_predict(model, unpatchify(permuted, 4, 3).reshaped({1, 16, 16, 3}));
    double diff = 0.0;
    for (std::size_t k = 0; k < 4; ++k) diff += std::abs(a[k] - b[k]);
    EXPECT_GT(diff, 1e-9);
}

TEST(Vit, TrainingDropoutDependsOnRngOnly)
{
    Rng rng(10);
    auto cfg = tiny_model();
    cfg.vit.dropout_rate = 0.2;
    Model<double> model = init_model<double>(cfg, rng);
    const auto images = image_batch(2, model.config.vit, rng);
    auto run = [&](std::uint64_t seed) {
        Rng r(seed);
        Tape<double> tape(false);
        return vit_forward(tape, images, model.params, model.config.vit, {true, &r}).value();
    };
    EXPECT_EQ(run(1), run(1));
    EXPECT_NE(run(1), run(2));
    Tape<double> tape(false);
    EXPECT_THROW(vit_forward(tape, images, model.params, model.config.vit, {true, nullptr}), ContractError);
}

TEST(Gradcheck, TinyModelPassesEveryCombination)
{
    for (auto head : {HeadKind::DenseSoftmax, HeadKind::SvmHinge}) {
        for (auto mode : {LossMode::Probability, LossMode::Margin}) {
            auto cfg = tiny_model(head);
            cfg.head.loss_mode = mode;
            const auto r = gradcheck(cfg);
            EXPECT_TRUE(r.passed) << to_string(head) << "/" << to_string(mode) << " " << r.max_rel_error << " at "
                                  << r.worst_param;
            Rng scratch(0);
            EXPECT_EQ(r.params.size(), init_model<double>(cfg, scratch).params.size());
        }
    }
}

TEST(Gradcheck, CorruptedGradientFailsNamingTheParameter)
{
    GradcheckOptions opts;
    opts.corrupt = [](GradientMap<double>& g) { g.at("encoder/1/attn_k_w")[3] += 0.5; };
    const auto r = gradcheck(tiny_model(), opts);
    EXPECT_FALSE(r.passed);
    EXPECT_EQ(r.worst_param, "encoder/1/attn_k_w");
}

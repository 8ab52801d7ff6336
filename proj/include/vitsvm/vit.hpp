#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vitsvm/autodiff.hpp"
#include "vitsvm/errors.hpp"
#include "vitsvm/rng.hpp"
#include "vitsvm/tensor.hpp"

namespace vitsvm {

struct VitConfig {
    std::size_t image_size = 256;
    std::size_t channels = 3;
    std::size_t patch_size = 32;
    std::size_t hidden_dim = 768;
    std::size_t num_layers = 12;
    std::size_t num_heads = 12;
    std::size_t mlp_dim = 3072;
    double dropout_rate = 0.1;
    std::size_t num_classes = 4;
    double ln_eps = 1e-6;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t num_tokens() const { return num_patches() + 1; }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t head_dim() const { return hidden_dim / num_heads; }

    void validate() const
    {
        for (auto [value, name] : {std::pair{image_size, "image_size"}, {channels, "channels"},
                                   {patch_size, "patch_size"}, {hidden_dim, "hidden_dim"},
                                   {num_heads, "num_heads"}, {mlp_dim, "mlp_dim"},
                                   {num_classes, "num_classes"}}) {
            if (value < 1) throw ConfigError(std::string(name) + " must be at least 1");
        }
        if (image_size % patch_size != 0) {
            throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                              std::to_string(patch_size));
        }
        if (hidden_dim % num_heads != 0) {
            throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                              std::to_string(num_heads));
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
        if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
    }

    // ViT-B/32.
    static VitConfig vit_b32() { return VitConfig{}; }

    // Small enough for finite-difference checks and CI training runs.
    static VitConfig tiny()
    {
        VitConfig c;
        c.image_size = 16;
        c.patch_size = 4;
        c.hidden_dim = 16;
        c.num_layers = 2;
        c.num_heads = 2;
        c.mlp_dim = 32;
        c.dropout_rate = 0.0;
        return c;
    }

    friend bool operator==(const VitConfig&, const VitConfig&) = default;
};

// Runtime switches shared by every forward pass.
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;

    Rng& random() const
    {
        if (!rng) throw ContractError("training-mode forward requires an RNG");
        return *rng;
    }
};

namespace detail {

template <class T>
Tensor<T> uniform_fan_in(Shape shape, Rng& rng)
{
    const double limit = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-limit, limit));
    return t;
}

template <class T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng)
{
    Tensor<T> t(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.truncated_normal(stddev));
    return t;
}

inline std::string layer_prefix(std::size_t layer) { return "encoder/" + std::to_string(layer) + "/"; }

}  // namespace detail

/// Adds every backbone parameter to `store` in a fixed order.
///
/// Linear weights are stored input-major ([in x out]) and drawn uniformly
/// in +-1/sqrt(fan_in); class token and position embeddings come from a
/// normal with std 0.02 truncated at two deviations; biases and LN betas
/// are zero and LN gammas are one.
template <class T>
void init_vit_params(const VitConfig& cfg, ParamStore<T>& store, Rng& rng)
{
    cfg.validate();
    const std::size_t d = cfg.hidden_dim;
    store.add("embed/patch_w", detail::uniform_fan_in<T>({cfg.patch_dim(), d}, rng));
    store.add("embed/patch_b", Tensor<T>::zeros({d}));
    store.add("embed/cls", detail::truncated_normal<T>({1, d}, 0.02, rng));
    store.add("embed/pos", detail::truncated_normal<T>({cfg.num_tokens(), d}, 0.02, rng));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const auto p = detail::layer_prefix(l);
        store.add(p + "ln1_g", Tensor<T>::ones({d}));
        store.add(p + "ln1_b", Tensor<T>::zeros({d}));
        for (const char* proj : {"q", "k", "v", "o"}) {
            store.add(p + "attn_" + proj + "_w", detail::uniform_fan_in<T>({d, d}, rng));
            store.add(p + "attn_" + proj + "_b", Tensor<T>::zeros({d}));
        }
        store.add(p + "ln2_g", Tensor<T>::ones({d}));
        store.add(p + "ln2_b", Tensor<T>::zeros({d}));
        store.add(p + "mlp1_w", detail::uniform_fan_in<T>({d, cfg.mlp_dim}, rng));
        store.add(p + "mlp1_b", Tensor<T>::zeros({cfg.mlp_dim}));
        store.add(p + "mlp2_w", detail::uniform_fan_in<T>({cfg.mlp_dim, d}, rng));
        store.add(p + "mlp2_b", Tensor<T>::zeros({d}));
    }
    store.add("final_ln/g", Tensor<T>::ones({d}));
    store.add("final_ln/b", Tensor<T>::zeros({d}));
}

// Closed form of the backbone parameter count.
inline std::size_t vit_param_count(const VitConfig& cfg)
{
    const std::size_t d = cfg.hidden_dim, m = cfg.mlp_dim;
    const std::size_t embed = cfg.patch_dim() * d + d + d + cfg.num_tokens() * d;
    const std::size_t layer = 4 * d + 4 * (d * d + d) + (d * m + m) + (m * d + d);
    return embed + cfg.num_layers * layer + 2 * d;
}

/// Cuts an H x W x C image into non-overlapping P x P patches.
///
/// Output row r is patch (r / (W/P), r % (W/P)) of the row-major grid,
/// flattened in (row, column, channel) order.
template <class T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch)
{
    if (image.rank() != 3 || patch == 0 || image.dim(0) % patch != 0 || image.dim(1) % patch != 0) {
        throw DimensionError("patchify: image " + shape_to_string(image.shape()) +
                             " cannot be split into patches of " + std::to_string(patch));
    }
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    const std::size_t gh = h / patch, gw = w / patch;
    const std::size_t row_len = patch * patch * c;
    Tensor<T> out(Shape{gh * gw, row_len});
    auto od = out.mutable_data();
    const auto id = image.data();
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            T* dst = od.data() + (gy * gw + gx) * row_len;
            for (std::size_t py = 0; py < patch; ++py) {
                const T* src = id.data() + ((gy * patch + py) * w + gx * patch) * c;
                std::copy(src, src + patch * c, dst + py * patch * c);
            }
        }
    return out;
}

// Inverse of patchify for a square grid.
template <class T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t patch, std::size_t channels)
{
    const std::size_t n = patches.dim(0);
    const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
    if (g * g != n || patches.dim(1) != patch * patch * channels) {
        throw DimensionError("unpatchify: " + shape_to_string(patches.shape()) + " is not a square patch grid");
    }
    const std::size_t size = g * patch;
    Tensor<T> image(Shape{size, size, channels});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t py = 0; py < patch; ++py)
            for (std::size_t px = 0; px < patch; ++px)
                for (std::size_t ch = 0; ch < channels; ++ch) {
                    const std::size_t y = (r / g) * patch + py, x = (r % g) * patch + px;
                    image[(y * size + x) * channels + ch] = patches.at(r, (py * patch + px) * channels + ch);
                }
    return image;
}

template <class T>
Var<T> dense(Tape<T>& tape, Var<T> x, const ParamStore<T>& store, const std::string& weight, const std::string& bias)
{
    return add_row(matmul(x, tape.parameter(store, weight)), tape.parameter(store, bias));
}

/// Patch projection, class-token prepend and position embedding:
/// returns (N+1) x D tokens.
template <class T>
Var<T> embed(Tape<T>& tape, const Tensor<T>& patches, const ParamStore<T>& store)
{
    const Tensor<T>& w = store.get("embed/patch_w");
    if (patches.rank() != 2 || patches.dim(1) != w.dim(0)) {
        throw DimensionError("embed: patches " + shape_to_string(patches.shape()) + " do not match projection " +
                             shape_to_string(w.shape()));
    }
    auto tokens = dense(tape, tape.constant(patches), store, "embed/patch_w", "embed/patch_b");
    auto seq = concat<T>({tape.parameter(store, "embed/cls"), tokens}, 0);
    return add(seq, tape.parameter(store, "embed/pos"));
}

/// Multi-head self-attention over a T x D token matrix.
///
/// Heads are contiguous column blocks of the Q/K/V projections. When
/// `weights_out` is non-null the per-head T x T attention matrices are
/// appended to it.
template <class T>
Var<T> multi_head_attention(Tape<T>& tape, Var<T> tokens, const ParamStore<T>& store, const std::string& prefix,
                            std::size_t num_heads, std::vector<Tensor<T>>* weights_out = nullptr)
{
    const std::size_t d_model = tokens.shape()[1];
    if (num_heads == 0 || d_model % num_heads != 0) {
        throw ConfigError("hidden_dim " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    const std::size_t head_dim = d_model / num_heads;
    auto q = dense(tape, tokens, store, prefix + "attn_q_w", prefix + "attn_q_b");
    auto k = dense(tape, tokens, store, prefix + "attn_k_w", prefix + "attn_k_b");
    auto v = dense(tape, tokens, store, prefix + "attn_v_w", prefix + "attn_v_b");
    const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(head_dim));
    std::vector<Var<T>> heads;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        auto qh = slice(q, 1, h * head_dim, head_dim);
        auto kh = slice(k, 1, h * head_dim, head_dim);
        auto vh = slice(v, 1, h * head_dim, head_dim);
        auto weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_d), 1);
        if (weights_out) weights_out->push_back(weights.value());
        heads.push_back(matmul(weights, vh));
    }
    auto merged = num_heads == 1 ? heads[0] : concat(heads, 1);
    return dense(tape, merged, store, prefix + "attn_o_w", prefix + "attn_o_b");
}

/// Pre-LN encoder block:
///   x1 = x + MSA(LN1(x))
///   x2 = x1 + Dropout(Dense(Dropout(GELU(Dense(LN2(x1))))))
template <class T>
Var<T> encoder_block(Tape<T>& tape, Var<T> x, const ParamStore<T>& store, const VitConfig& cfg, std::size_t layer,
                     const ForwardContext& ctx, std::vector<Tensor<T>>* weights_out = nullptr)
{
    const auto p = detail::layer_prefix(layer);
    const T eps = static_cast<T>(cfg.ln_eps);
    auto h = layer_norm(x, tape.parameter(store, p + "ln1_g"), tape.parameter(store, p + "ln1_b"), eps);
    auto x1 = add(x, multi_head_attention(tape, h, store, p, cfg.num_heads, weights_out));
    auto h2 = layer_norm(x1, tape.parameter(store, p + "ln2_g"), tape.parameter(store, p + "ln2_b"), eps);
    auto m = gelu(dense(tape, h2, store, p + "mlp1_w", p + "mlp1_b"));
    if (ctx.training && cfg.dropout_rate > 0.0) m = dropout(m, cfg.dropout_rate, true, ctx.random());
    m = dense(tape, m, store, p + "mlp2_w", p + "mlp2_b");
    if (ctx.training && cfg.dropout_rate > 0.0) m = dropout(m, cfg.dropout_rate, true, ctx.random());
    return add(x1, m);
}

// One image through the backbone; returns the 1 x D class-token representation.
template <class T>
Var<T> vit_forward_single(Tape<T>& tape, const Tensor<T>& image, const ParamStore<T>& store, const VitConfig& cfg,
                          const ForwardContext& ctx)
{
    if (image.shape() != Shape{cfg.image_size, cfg.image_size, cfg.channels}) {
        throw DimensionError("vit_forward: image " + shape_to_string(image.shape()) + " does not match config " +
                             shape_to_string({cfg.image_size, cfg.image_size, cfg.channels}));
    }
    auto x = embed(tape, patchify(image, cfg.patch_size), store);
    if (ctx.training && cfg.dropout_rate > 0.0) x = dropout(x, cfg.dropout_rate, true, ctx.random());
    for (std::size_t l = 0; l < cfg.num_layers; ++l) x = encoder_block(tape, x, store, cfg, l, ctx);
    auto cls = slice(x, 0, 0, 1);
    return layer_norm(cls, tape.parameter(store, "final_ln/g"), tape.parameter(store, "final_ln/b"),
                      static_cast<T>(cfg.ln_eps));
}

/// Batched backbone forward over B x H x W x C images; returns B x D.
/// Images are processed independently, so row i depends only on image i
/// (and, in training mode, on the random stream position).
template <class T>
Var<T> vit_forward(Tape<T>& tape, const Tensor<T>& images, const ParamStore<T>& store, const VitConfig& cfg,
                   const ForwardContext& ctx)
{
    if (images.rank() != 4) {
        throw DimensionError("vit_forward: expected B x H x W x C images, got " + shape_to_string(images.shape()));
    }
    const std::size_t batch = images.dim(0);
    const std::size_t per_image = images.size() / batch;
    const Shape image_shape{images.dim(1), images.dim(2), images.dim(3)};
    std::vector<Var<T>> rows;
    rows.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto first = images.data().begin() + static_cast<std::ptrdiff_t>(b * per_image);
        Tensor<T> image(image_shape, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(per_image)));
        rows.push_back(vit_forward_single(tape, image, store, cfg, ctx));
    }
    return batch == 1 ? rows[0] : concat(rows, 0);
}

}  // namespace vitsvm

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vitsvm/autodiff.hpp"
#include "vitsvm/vit.hpp"

namespace vitsvm {

enum class HeadKind { DenseSoftmax, SvmHinge };

// Where the data term is evaluated: on softmax probabilities (the default
// stack) or directly on the pre-softmax logits.
enum class LossMode { Probability, Margin };

inline std::string to_string(HeadKind k) { return k == HeadKind::DenseSoftmax ? "dense-softmax" : "svm-hinge"; }
inline std::string to_string(LossMode m) { return m == LossMode::Probability ? "probability" : "margin"; }

inline HeadKind parse_head_kind(const std::string& s)
{
    if (s == "dense-softmax") return HeadKind::DenseSoftmax;
    if (s == "svm-hinge") return HeadKind::SvmHinge;
    throw ConfigError("unknown head kind '" + s + "' (expected dense-softmax or svm-hinge)");
}

inline LossMode parse_loss_mode(const std::string& s)
{
    if (s == "probability") return LossMode::Probability;
    if (s == "margin") return LossMode::Margin;
    throw ConfigError("unknown loss mode '" + s + "' (expected probability or margin)");
}

struct HeadConfig {
    HeadKind kind = HeadKind::SvmHinge;
    std::size_t svm_hidden = 64;
    double dropout = 0.5;
    double l2 = 0.01;
    LossMode loss_mode = LossMode::Probability;
    // Apply a softmax to the backbone features before the SVM dense stack.
    bool softmax_features = false;

    void validate() const
    {
        if (svm_hidden < 1) throw ConfigError("svm_hidden must be at least 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("head dropout must lie in [0, 1)");
        if (!(l2 >= 0.0)) throw ConfigError("l2 factor must be non-negative");
    }

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

template <class T>
void init_head_params(const HeadConfig& head, std::size_t hidden_dim, std::size_t num_classes, ParamStore<T>& store,
                      Rng& rng)
{
    head.validate();
    if (head.kind == HeadKind::DenseSoftmax) {
        store.add("head/dense_w", detail::uniform_fan_in<T>({hidden_dim, num_classes}, rng));
        store.add("head/dense_b", Tensor<T>::zeros({num_classes}));
    } else {
        store.add("head/svm1_w", detail::uniform_fan_in<T>({hidden_dim, head.svm_hidden}, rng));
        store.add("head/svm1_b", Tensor<T>::zeros({head.svm_hidden}));
        store.add("head/svm2_w", detail::uniform_fan_in<T>({head.svm_hidden, num_classes}, rng));
        store.add("head/svm2_b", Tensor<T>::zeros({num_classes}));
    }
}

inline std::size_t head_param_count(const HeadConfig& head, std::size_t hidden_dim, std::size_t num_classes)
{
    if (head.kind == HeadKind::DenseSoftmax) return hidden_dim * num_classes + num_classes;
    return hidden_dim * head.svm_hidden + head.svm_hidden + head.svm_hidden * num_classes + num_classes;
}

// Pre-softmax scores B x K. Dropout precedes the dense stack for both heads.
template <class T>
Var<T> head_logits(Tape<T>& tape, Var<T> features, const ParamStore<T>& store, const HeadConfig& head,
                   const ForwardContext& ctx)
{
    auto x = features;
    if (head.kind == HeadKind::SvmHinge && head.softmax_features) x = softmax(x, 1);
    if (ctx.training && head.dropout > 0.0) x = dropout(x, head.dropout, true, ctx.random());
    if (head.kind == HeadKind::DenseSoftmax) return dense(tape, x, store, "head/dense_w", "head/dense_b");
    auto hidden = dense(tape, x, store, "head/svm1_w", "head/svm1_b");
    return dense(tape, hidden, store, "head/svm2_w", "head/svm2_b");
}

// dropout -> dense(D->K) -> softmax
template <class T>
Var<T> baseline_head_forward(Tape<T>& tape, Var<T> features, const ParamStore<T>& store, const HeadConfig& head,
                             const ForwardContext& ctx)
{
    HeadConfig h = head;
    h.kind = HeadKind::DenseSoftmax;
    return softmax(head_logits(tape, features, store, h, ctx), 1);
}

// dropout -> dense(D->64) -> dense(64->K) -> softmax, no hidden activation
template <class T>
Var<T> svm_head_forward(Tape<T>& tape, Var<T> features, const ParamStore<T>& store, const HeadConfig& head,
                        const ForwardContext& ctx)
{
    HeadConfig h = head;
    h.kind = HeadKind::SvmHinge;
    return softmax(head_logits(tape, features, store, h, ctx), 1);
}

template <class T>
void check_one_hot(const Tensor<T>& y, const Shape& expected)
{
    if (y.shape() != expected) {
        throw ContractError("one-hot targets " + shape_to_string(y.shape()) + " do not match predictions " +
                            shape_to_string(expected));
    }
    const std::size_t k = y.dim(1);
    for (std::size_t b = 0; b < y.dim(0); ++b) {
        int ones = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const T v = y.at(b, j);
            if (v == T{1}) ++ones;
            else if (v != T{0}) ones = 2;
        }
        if (ones != 1) throw ContractError("row " + std::to_string(b) + " of the targets is not one-hot");
    }
}

template <class T>
Tensor<T> one_hot(const std::vector<std::size_t>& labels, std::size_t num_classes)
{
    if (labels.empty()) throw ContractError("one_hot: empty label list");
    Tensor<T> y(Shape{labels.size(), num_classes});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] >= num_classes) {
            throw ContractError("label " + std::to_string(labels[b]) + " at index " + std::to_string(b) +
                                " outside 0.." + std::to_string(num_classes - 1));
        }
        y.at(b, labels[b]) = T{1};
    }
    return y;
}

inline constexpr double kCrossEntropyClip = 1e-12;

// -(1/B) sum_b sum_k y log(p + 1e-12)
template <class T>
double categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets)
{
    check_one_hot(targets, probs.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (targets[i] != T{0}) total -= std::log(static_cast<double>(probs[i]) + kCrossEntropyClip);
    }
    return total / static_cast<double>(probs.dim(0));
}

// (1/B) sum_b (1/K) sum_k max(0, 1 - t p)^2 with t = 2y - 1
template <class T>
double squared_hinge_loss(const Tensor<T>& scores, const Tensor<T>& targets)
{
    check_one_hot(targets, scores.shape());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double t = 2.0 * static_cast<double>(targets[i]) - 1.0;
        const double raw = 1.0 - t * static_cast<double>(scores[i]);
        const double margin = raw < 0.0 ? 0.0 : raw;
        total += margin * margin;
    }
    return total / static_cast<double>(scores.size());
}

// lambda * (sum of squared SVM dense weights); biases and the dense-softmax head carry no penalty.
template <class T>
double l2_penalty(const ParamStore<T>& store, double lambda)
{
    if (!(lambda >= 0.0)) throw ParameterError("l2 lambda must be non-negative");
    double total = 0.0;
    for (const char* name : {"head/svm1_w", "head/svm2_w"}) {
        if (!store.contains(name)) continue;
        for (T w : store.get(name).data()) total += static_cast<double>(w) * static_cast<double>(w);
    }
    return lambda * total;
}

// Recorded counterparts of the losses above.

template <class T>
Var<T> cross_entropy(Var<T> probs, const Tensor<T>& targets)
{
    check_one_hot(targets, probs.shape());
    auto logp = log(add_scalar(probs, static_cast<T>(kCrossEntropyClip)));
    return scale(sum(mul_const(logp, targets)), T{-1} / static_cast<T>(targets.dim(0)));
}

template <class T>
Var<T> cross_entropy_from_logits(Var<T> logits, const Tensor<T>& targets)
{
    check_one_hot(targets, logits.shape());
    return scale(sum(mul_const(log_softmax(logits, 1), targets)), T{-1} / static_cast<T>(targets.dim(0)));
}

template <class T>
Var<T> squared_hinge(Var<T> scores, const Tensor<T>& targets)
{
    check_one_hot(targets, scores.shape());
    auto signs = kernels::map(targets, [](T y) { return T{2} * y - T{1}; });
    auto margin = relu(add_scalar(scale(mul_const(scores, std::move(signs)), T{-1}), T{1}));
    return scale(sum(square(margin)), T{1} / static_cast<T>(targets.size()));
}

template <class T>
Var<T> l2_penalty(Tape<T>& tape, const ParamStore<T>& store, double lambda)
{
    if (!(lambda >= 0.0)) throw ParameterError("l2 lambda must be non-negative");
    std::vector<Var<T>> terms;
    for (const char* name : {"head/svm1_w", "head/svm2_w"}) {
        if (store.contains(name)) terms.push_back(sum(square(tape.parameter(store, name))));
    }
    if (terms.empty()) return tape.constant(Tensor<T>::scalar(T{0}));
    auto total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return scale(total, static_cast<T>(lambda));
}

struct LossValue {
    double total = 0.0;
    double data_term = 0.0;
    double reg_term = 0.0;
};

template <class T>
struct HeadOutput {
    Var<T> logits;
    Var<T> probs;
    Var<T> data_term;
    Var<T> reg_term;
    Var<T> total;

    LossValue loss() const
    {
        return {static_cast<double>(total.value().item()), static_cast<double>(data_term.value().item()),
                static_cast<double>(reg_term.value().item())};
    }
};

/// Head forward plus its loss: cross-entropy for the dense-softmax head,
/// squared hinge plus L2 for the SVM head, on probabilities or logits per
/// `head.loss_mode`.
template <class T>
HeadOutput<T> head_loss(Tape<T>& tape, Var<T> features, const Tensor<T>& targets, const ParamStore<T>& store,
                        const HeadConfig& head, const ForwardContext& ctx)
{
    auto logits = head_logits(tape, features, store, head, ctx);
    auto probs = softmax(logits, 1);
    Var<T> data;
    Var<T> reg;
    if (head.kind == HeadKind::DenseSoftmax) {
        data = head.loss_mode == LossMode::Probability ? cross_entropy(probs, targets)
                                                       : cross_entropy_from_logits(logits, targets);
        reg = tape.constant(Tensor<T>::scalar(T{0}));
    } else {
        data = squared_hinge(head.loss_mode == LossMode::Probability ? probs : logits, targets);
        reg = l2_penalty(tape, store, head.l2);
    }
    return {logits, probs, data, reg, add(data, reg)};
}

// Argmax per row; ties go to the lowest class index.
template <class T>
std::vector<std::size_t> predict_classes(const Tensor<T>& probs)
{
    kernels::require_rank2(probs, "predict_classes");
    std::vector<std::size_t> out(probs.dim(0));
    for (std::size_t b = 0; b < probs.dim(0); ++b) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < probs.dim(1); ++k) {
            if (probs.at(b, k) > probs.at(b, best)) best = k;
        }
        out[b] = best;
    }
    return out;
}

}  // namespace vitsvm

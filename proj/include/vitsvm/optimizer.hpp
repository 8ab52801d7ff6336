#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vitsvm/autodiff.hpp"

namespace vitsvm {

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

/// Per-parameter Adam moments, aligned with ParamStore order.
template <std::floating_point T>
struct AdamState {
    AdamHyper hyper;
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <class T>
AdamState<T> make_adam_state(const ParamStore<T>& params, AdamHyper hyper)
{
    if (!(hyper.lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (!(hyper.beta1 >= 0.0 && hyper.beta1 < 1.0) || !(hyper.beta2 >= 0.0 && hyper.beta2 < 1.0)) {
        throw ParameterError("Adam betas must lie in [0, 1)");
    }
    if (!(hyper.eps > 0.0)) throw ParameterError("Adam eps must be positive");
    AdamState<T> state;
    state.hyper = hyper;
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m.push_back(Tensor<T>::zeros(params.at(i).shape()));
        state.v.push_back(Tensor<T>::zeros(params.at(i).shape()));
    }
    return state;
}

/// One bias-corrected Adam update of every parameter.
///
/// All gradients are validated before any parameter changes, so a contract
/// error leaves parameters and state untouched.
template <class T>
void adam_step(ParamStore<T>& params, const GradientMap<T>& grads, AdamState<T>& state)
{
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("optimizer state tracks " + std::to_string(state.m.size()) + " tensors but model has " +
                            std::to_string(params.size()));
    }
    std::vector<const Tensor<T>*> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.names()[i];
        auto it = grads.find(name);
        if (it == grads.end()) throw ContractError("missing gradient for parameter '" + name + "'");
        if (it->second.shape() != params.at(i).shape() || state.m[i].shape() != params.at(i).shape()) {
            throw ContractError("gradient for '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                                ", parameter has " + shape_to_string(params.at(i).shape()));
        }
        g[i] = &it->second;
    }
    state.step += 1;
    const auto& h = state.hyper;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
    const T lr = static_cast<T>(h.lr), eps = static_cast<T>(h.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params.at(i).mutable_data();
        auto m = state.m[i].mutable_data();
        auto v = state.v[i].mutable_data();
        const auto gd = g[i]->data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * gd[j];
            v[j] = b2 * v[j] + (T{1} - b2) * gd[j] * gd[j];
            const T m_hat = m[j] / bc1;
            const T v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

/// Reduce-on-plateau learning-rate schedule.
struct LrSchedule {
    double factor = 0.5;
    std::size_t patience = 5;
    double min_delta = 1e-4;
    double min_lr = 1e-6;
    double best = std::numeric_limits<double>::infinity();
    std::size_t wait = 0;

    void validate() const
    {
        if (!(factor > 0.0 && factor < 1.0)) throw ParameterError("lr factor must lie in (0, 1)");
        if (!(min_lr > 0.0)) throw ParameterError("min_lr must be positive");
        if (!(min_delta >= 0.0)) throw ParameterError("min_delta must be non-negative");
    }

    friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

// Feeds one epoch's validation loss; returns the learning rate to use next.
inline double maybe_reduce_lr(LrSchedule& s, double lr, double val_loss)
{
    if (!std::isfinite(val_loss)) throw NumericError("validation loss is not finite");
    if (val_loss < s.best - s.min_delta) {
        s.best = val_loss;
        s.wait = 0;
        return lr;
    }
    if (++s.wait >= s.patience) {
        s.wait = 0;
        return std::max(lr * s.factor, s.min_lr);
    }
    return lr;
}

}  // namespace vitsvm

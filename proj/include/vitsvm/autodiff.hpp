#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitsvm/errors.hpp"
#include "vitsvm/rng.hpp"
#include "vitsvm/tensor.hpp"

namespace vitsvm {

/// Named, ordered collection of trainable tensors.
template <std::floating_point T>
class ParamStore {
public:
    void add(const std::string& name, Tensor<T> value)
    {
        if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
        index_.emplace(name, names_.size());
        names_.push_back(name);
        tensors_.push_back(std::move(value));
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    const Tensor<T>& get(const std::string& name) const { return tensors_[index_of(name)]; }
    Tensor<T>& get_mutable(const std::string& name) { return tensors_[index_of(name)]; }

    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return names_.size(); }
    const Tensor<T>& at(std::size_t i) const { return tensors_.at(i); }
    Tensor<T>& at(std::size_t i) { return tensors_.at(i); }

    std::size_t element_count() const
    {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b)
    {
        return a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    std::size_t index_of(const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <std::floating_point T>
using GradientMap = std::map<std::string, Tensor<T>>;

template <std::floating_point T>
class Tape;

// Handle to a value recorded on a tape.
template <std::floating_point T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so every node's operands precede
/// it and a single reverse sweep visits nodes in a valid order. Parameter
/// leaves alias the tensors of a ParamStore, which must outlive the tape and
/// stay unmodified while it is alive.
template <std::floating_point T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var<T> constant(Tensor<T> value)
    {
        nodes_.push_back(Node{std::move(value), nullptr, {}, {}, false});
        return {this, nodes_.size() - 1};
    }

    // Leaf for a stored parameter; repeated requests return the same node.
    Var<T> parameter(const ParamStore<T>& store, const std::string& name)
    {
        if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return {this, it->second};
        nodes_.push_back(Node{Tensor<T>{}, &store.get(name), {}, {}, grad_enabled_});
        param_nodes_.emplace(name, nodes_.size() - 1);
        return {this, nodes_.size() - 1};
    }

    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn)
    {
        return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
    }

    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn)
    {
        Node node{std::move(value), nullptr, {}, {}, false};
        for (const auto& in : inputs) {
            if (in.tape != this) throw ContractError("operand recorded on a different tape");
            node.inputs.push_back(in.id);
            node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
        }
        if (node.requires_grad) node.backward = std::move(fn);
        nodes_.push_back(std::move(node));
        return {this, nodes_.size() - 1};
    }

    const Tensor<T>& value(std::size_t id) const
    {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    // Adds `g` into the gradient of node `id`; no-op for nodes outside the differentiated graph.
    void accumulate(std::size_t id, Tensor<T> g)
    {
        if (!nodes_[id].requires_grad) return;
        auto& slot = grads_[id];
        if (!slot) {
            slot = std::move(g);
            return;
        }
        kernels::require_same_shape(*slot, g, "gradient accumulation");
        auto d = slot->mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }

    /// Gradient of a scalar `loss` with respect to every parameter in `params`.
    ///
    /// Parameters that never reached the loss receive zero tensors of their
    /// own shape, so the result always has exactly one entry per parameter.
    GradientMap<T> backward(Var<T> loss, const ParamStore<T>& params)
    {
        if (loss.tape != this) throw ContractError("loss was not recorded on this tape");
        if (!loss.value().is_scalar()) {
            throw ContractError("backward requires a scalar loss, got " + shape_to_string(loss.shape()));
        }
        grads_.assign(nodes_.size(), std::nullopt);
        if (nodes_[loss.id].requires_grad) grads_[loss.id] = Tensor<T>::ones(loss.shape());
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            if (!grads_[i] || !nodes_[i].backward) continue;
            const Tensor<T> g = std::move(*grads_[i]);
            grads_[i].reset();
            nodes_[i].backward(*this, g);
        }
        GradientMap<T> out;
        for (const auto& name : params.names()) {
            auto it = param_nodes_.find(name);
            if (it != param_nodes_.end() && grads_[it->second]) {
                out.emplace(name, std::move(*grads_[it->second]));
            } else {
                out.emplace(name, Tensor<T>::zeros(params.get(name).shape()));
            }
        }
        grads_.clear();
        return out;
    }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad;
    };

    bool grad_enabled_;
    std::deque<Node> nodes_;
    std::unordered_map<std::string, std::size_t> param_nodes_;
    std::vector<std::optional<Tensor<T>>> grads_;
};

// ---------------------------------------------------------------------------
// Recorded primitives
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b)
{
    return a.tape->record(kernels::add(a.value(), b.value()), {a, b},
                          [a = a.id, b = b.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, g);
                              t.accumulate(b, g);
                          });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b)
{
    auto value = kernels::zip(a.value(), b.value(), std::minus<T>{}, "sub");
    return a.tape->record(std::move(value), {a, b}, [a = a.id, b = b.id](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(a, g);
        t.accumulate(b, kernels::map(g, [](T v) { return -v; }));
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b)
{
    return a.tape->record(kernels::mul(a.value(), b.value()), {a, b},
                          [a = a.id, b = b.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, kernels::mul(g, t.value(b)));
                              t.accumulate(b, kernels::mul(g, t.value(a)));
                          });
}

// Elementwise product with a constant tensor (targets, masks).
template <class T>
Var<T> mul_const(Var<T> a, Tensor<T> c)
{
    auto value = kernels::mul(a.value(), c);
    return a.tape->record(std::move(value), {a}, [a = a.id, c = std::move(c)](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(a, kernels::mul(g, c));
    });
}

// Adds a bias vector to every row of a matrix.
template <class T>
Var<T> add_row(Var<T> a, Var<T> bias)
{
    return a.tape->record(kernels::add_row(a.value(), bias.value()), {a, bias},
                          [a = a.id, b = bias.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, g);
                              if (!t.requires_grad(b)) return;
                              const std::size_t n = g.dim(1);
                              std::vector<T> col(n, T{0});
                              for (std::size_t i = 0; i < g.size(); ++i) col[i % n] += g[i];
                              t.accumulate(b, Tensor<T>(t.value(b).shape(), std::move(col)));
                          });
}

template <class T>
Var<T> scale(Var<T> a, T s)
{
    return a.tape->record(kernels::map(a.value(), [s](T v) { return v * s; }), {a},
                          [a = a.id, s](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, kernels::map(g, [s](T v) { return v * s; }));
                          });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s)
{
    return a.tape->record(kernels::map(a.value(), [s](T v) { return v + s; }), {a},
                          [a = a.id](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, g); });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape)
{
    return a.tape->record(a.value().reshaped(std::move(shape)), {a}, [a = a.id](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(a, g.reshaped(t.value(a).shape()));
    });
}

template <class T>
Var<T> transpose(Var<T> a)
{
    return a.tape->record(kernels::transpose(a.value()), {a}, [a = a.id](Tape<T>& t, const Tensor<T>& g) {
        t.accumulate(a, kernels::transpose(g));
    });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b)
{
    return a.tape->record(kernels::matmul(a.value(), b.value()), {a, b},
                          [a = a.id, b = b.id](Tape<T>& t, const Tensor<T>& g) {
                              if (t.requires_grad(a)) t.accumulate(a, kernels::matmul(g, kernels::transpose(t.value(b))));
                              if (t.requires_grad(b)) t.accumulate(b, kernels::matmul(kernels::transpose(t.value(a)), g));
                          });
}

template <class T>
Var<T> sum(Var<T> a)
{
    return a.tape->record(Tensor<T>::scalar(kernels::sum(a.value())), {a},
                          [a = a.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, Tensor<T>(t.value(a).shape(), g[0]));
                          });
}

template <class T>
Var<T> mean(Var<T> a)
{
    return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

// Concatenates matrices along axis 0 (token axis) or 1.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis)
{
    if (parts.empty()) throw DimensionError("concat: no operands");
    std::vector<Tensor<T>> values;
    values.reserve(parts.size());
    for (const auto& p : parts) values.push_back(p.value());
    auto out = kernels::concat<T>(values, axis);
    std::vector<std::size_t> ids;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        ids.push_back(p.id);
        extents.push_back(p.value().dim(axis));
    }
    return parts[0].tape->record(std::move(out), parts,
                                 [ids, extents, axis](Tape<T>& t, const Tensor<T>& g) {
                                     std::size_t start = 0;
                                     for (std::size_t i = 0; i < ids.size(); ++i) {
                                         if (t.requires_grad(ids[i])) {
                                             t.accumulate(ids[i], kernels::slice(g, axis, start, extents[i]));
                                         }
                                         start += extents[i];
                                     }
                                 });
}

template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t start, std::size_t len)
{
    return a.tape->record(kernels::slice(a.value(), axis, start, len), {a},
                          [a = a.id, axis, start](Tape<T>& t, const Tensor<T>& g) {
                              Tensor<T> full(t.value(a).shape());
                              for (std::size_t i = 0; i < g.dim(0); ++i)
                                  for (std::size_t j = 0; j < g.dim(1); ++j) {
                                      if (axis == 0) full.at(start + i, j) = g.at(i, j);
                                      else full.at(i, start + j) = g.at(i, j);
                                  }
                              t.accumulate(a, std::move(full));
                          });
}

template <class T>
Var<T> softmax(Var<T> a, std::size_t axis)
{
    auto y = kernels::softmax(a.value(), axis);
    return a.tape->record(std::move(y), {a}, [a = a.id, axis](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T> y = kernels::softmax(t.value(a), axis);
        auto [outer, extent, inner] = kernels::axis_split(y.shape(), axis);
        Tensor<T> dx(y.shape());
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * extent * inner + in;
                T dot{0};
                for (std::size_t e = 0; e < extent; ++e) dot += g[base + e * inner] * y[base + e * inner];
                for (std::size_t e = 0; e < extent; ++e) {
                    const std::size_t k = base + e * inner;
                    dx[k] = y[k] * (g[k] - dot);
                }
            }
        t.accumulate(a, std::move(dx));
    });
}

template <class T>
Var<T> log_softmax(Var<T> a, std::size_t axis)
{
    auto y = kernels::log_softmax(a.value(), axis);
    return a.tape->record(std::move(y), {a}, [a = a.id, axis](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T> p = kernels::softmax(t.value(a), axis);
        auto [outer, extent, inner] = kernels::axis_split(p.shape(), axis);
        Tensor<T> dx(p.shape());
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * extent * inner + in;
                T total{0};
                for (std::size_t e = 0; e < extent; ++e) total += g[base + e * inner];
                for (std::size_t e = 0; e < extent; ++e) {
                    const std::size_t k = base + e * inner;
                    dx[k] = g[k] - p[k] * total;
                }
            }
        t.accumulate(a, std::move(dx));
    });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6))
{
    auto y = kernels::layer_norm(x.value(), gamma.value(), beta.value(), eps);
    return x.tape->record(
        std::move(y), {x, gamma, beta},
        [x = x.id, gm = gamma.id, bt = beta.id, eps](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& xv = t.value(x);
            const Tensor<T>& gamma = t.value(gm);
            const std::size_t width = xv.shape().back();
            const std::size_t rows = xv.size() / width;
            Tensor<T> dx(xv.shape());
            std::vector<T> dgamma(width, T{0}), dbeta(width, T{0});
            std::vector<T> xhat(width), dxhat(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t off = r * width;
                T mu{0};
                for (std::size_t j = 0; j < width; ++j) mu += xv[off + j];
                mu /= static_cast<T>(width);
                T var{0};
                for (std::size_t j = 0; j < width; ++j) var += (xv[off + j] - mu) * (xv[off + j] - mu);
                var /= static_cast<T>(width);
                const T rstd = T{1} / std::sqrt(var + eps);
                T mean_dxhat{0}, mean_dxhat_xhat{0};
                for (std::size_t j = 0; j < width; ++j) {
                    xhat[j] = (xv[off + j] - mu) * rstd;
                    dxhat[j] = g[off + j] * gamma[j];
                    dgamma[j] += g[off + j] * xhat[j];
                    dbeta[j] += g[off + j];
                    mean_dxhat += dxhat[j];
                    mean_dxhat_xhat += dxhat[j] * xhat[j];
                }
                mean_dxhat /= static_cast<T>(width);
                mean_dxhat_xhat /= static_cast<T>(width);
                for (std::size_t j = 0; j < width; ++j) {
                    dx[off + j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            t.accumulate(x, std::move(dx));
            t.accumulate(gm, Tensor<T>(gamma.shape(), std::move(dgamma)));
            t.accumulate(bt, Tensor<T>(t.value(bt).shape(), std::move(dbeta)));
        });
}

template <class T>
Var<T> gelu(Var<T> a)
{
    return a.tape->record(kernels::gelu(a.value()), {a}, [a = a.id](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& x = t.value(a);
        Tensor<T> dx(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            dx[i] = g[i] * (kernels::normal_cdf(x[i]) + x[i] * kernels::normal_pdf(x[i]));
        }
        t.accumulate(a, std::move(dx));
    });
}

// NaN passes through so non-finite inputs stay visible in the loss.
template <class T>
Var<T> relu(Var<T> a)
{
    return a.tape->record(kernels::map(a.value(), [](T v) { return v < T{0} ? T{0} : v; }), {a},
                          [a = a.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, kernels::zip(
                                                  g, t.value(a),
                                                  [](T gv, T xv) { return xv > T{0} ? gv : T{0}; }, "relu"));
                          });
}

template <class T>
Var<T> square(Var<T> a)
{
    return a.tape->record(kernels::map(a.value(), [](T v) { return v * v; }), {a},
                          [a = a.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, kernels::zip(
                                                  g, t.value(a), [](T gv, T xv) { return T{2} * xv * gv; },
                                                  "square"));
                          });
}

template <class T>
Var<T> log(Var<T> a)
{
    return a.tape->record(kernels::map(a.value(), [](T v) { return std::log(v); }), {a},
                          [a = a.id](Tape<T>& t, const Tensor<T>& g) {
                              t.accumulate(a, kernels::zip(g, t.value(a), std::divides<T>{}, "log"));
                          });
}

inline void check_dropout_rate(double rate)
{
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
}

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Inference, or rate 0, is
/// the identity and consumes no random draws.
template <class T>
Var<T> dropout(Var<T> a, double rate, bool training, Rng& rng)
{
    check_dropout_rate(rate);
    if (!training || rate == 0.0) return a;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> mask(a.shape());
    for (auto& m : mask.mutable_data()) m = rng.bernoulli(rate) ? T{0} : keep_scale;
    return mul_const(a, std::move(mask));
}

// Plain-tensor dropout with the same draw order as the recorded op.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng)
{
    check_dropout_rate(rate);
    if (!training || rate == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = rng.bernoulli(rate) ? T{0} : x[i] * keep_scale;
    return y;
}

}  // namespace vitsvm

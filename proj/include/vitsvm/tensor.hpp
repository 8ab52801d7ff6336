#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vitsvm/errors.hpp"

namespace vitsvm {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of reals with shape metadata.
///
/// Every dimension is at least 1 and the element count always equals the
/// product of the shape. A default-constructed tensor is the scalar 0 with
/// shape [1].
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() : shape_{1}, data_(1, T{0}) {}

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape))
    {
        check_shape(shape_);
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        check_shape(shape_);
        if (shape_numel(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_to_string(shape_) + " holds " +
                                 std::to_string(shape_numel(shape_)) + " elements but " +
                                 std::to_string(data_.size()) + " values were given");
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    // Row-major matrix from nested initializer lists; rows must be equal length.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows)
    {
        const std::size_t m = rows.size();
        const std::size_t n = m ? rows.begin()->size() : 0;
        std::vector<T> data;
        data.reserve(m * n);
        for (const auto& row : rows) {
            if (row.size() != n) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor(Shape{m, n}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool is_scalar() const noexcept { return data_.size() == 1; }

    std::span<const T> data() const noexcept { return data_; }
    std::span<T> mutable_data() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T operator[](std::size_t i) const { return data_[i]; }
    T& operator[](std::size_t i) { return data_[i]; }

    T at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }
    T& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }

    T item() const
    {
        if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_to_string(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape shape) const
    {
        if (shape_numel(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    template <std::floating_point U>
    Tensor<U> cast() const
    {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    static void check_shape(const Shape& shape)
    {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor shape " + shape_to_string(shape) + " has a zero dimension");
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

namespace kernels {

template <class T>
void require_rank2(const Tensor<T>& t, const char* what)
{
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + " expects a matrix, got " + shape_to_string(t.shape()));
    }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_to_string(a.shape()) + " by " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n});
    auto cd = c.mutable_data();
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = cd.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = ad[i * k + p];
            const T* brow = bd.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a)
{
    require_rank2(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out(Shape{n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// Splits `shape` around `axis` into (outer, extent, inner) strides.
inline std::tuple<std::size_t, std::size_t, std::size_t> axis_split(const Shape& shape, std::size_t axis)
{
    if (axis >= shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    return {outer, shape[axis], inner};
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis)
{
    auto [outer, extent, inner] = axis_split(x.shape(), axis);
    Tensor<T> y(x.shape());
    const auto xd = x.data();
    auto yd = y.mutable_data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = xd[base];
            for (std::size_t e = 1; e < extent; ++e) mx = std::max(mx, xd[base + e * inner]);
            T total{0};
            for (std::size_t e = 0; e < extent; ++e) {
                const T v = std::exp(xd[base + e * inner] - mx);
                yd[base + e * inner] = v;
                total += v;
            }
            for (std::size_t e = 0; e < extent; ++e) yd[base + e * inner] /= total;
        }
    }
    return y;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis)
{
    auto [outer, extent, inner] = axis_split(x.shape(), axis);
    Tensor<T> y(x.shape());
    const auto xd = x.data();
    auto yd = y.mutable_data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = xd[base];
            for (std::size_t e = 1; e < extent; ++e) mx = std::max(mx, xd[base + e * inner]);
            T total{0};
            for (std::size_t e = 0; e < extent; ++e) total += std::exp(xd[base + e * inner] - mx);
            const T lse = mx + std::log(total);
            for (std::size_t e = 0; e < extent; ++e) yd[base + e * inner] = xd[base + e * inner] - lse;
        }
    }
    return y;
}

// Normalizes every slice along the last axis with population variance.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps)
{
    const std::size_t width = x.shape().back();
    if (gamma.size() != width || beta.size() != width) {
        throw DimensionError("layer_norm: gamma " + shape_to_string(gamma.shape()) + " / beta " +
                             shape_to_string(beta.shape()) + " do not match last axis of " +
                             shape_to_string(x.shape()));
    }
    if (!(eps > T{0})) throw ParameterError("layer_norm: eps must be positive");
    Tensor<T> y(x.shape());
    const auto xd = x.data();
    auto yd = y.mutable_data();
    const std::size_t rows = x.size() / width;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xd.data() + r * width;
        T mean{0};
        for (std::size_t j = 0; j < width; ++j) mean += xr[j];
        mean /= static_cast<T>(width);
        T var{0};
        for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(width);
        const T rstd = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < width; ++j) yd[r * width + j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
    }
    return y;
}

template <class T>
T normal_cdf(T x)
{
    return T{0.5} * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <class T>
T normal_pdf(T x)
{
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return static_cast<T>(inv_sqrt_2pi) * std::exp(T{-0.5} * x * x);
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F&& f)
{
    Tensor<T> y(x.shape());
    auto yd = y.mutable_data();
    const auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = f(xd[i]);
    return y;
}

template <class T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* what)
{
    require_same_shape(a, b, what);
    Tensor<T> y(a.shape());
    auto yd = y.mutable_data();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = f(a[i], b[i]);
    return y;
}

// Exact-CDF GELU, x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x)
{
    return map(x, [](T v) { return v * normal_cdf(v); });
}

// Tanh approximation, kept for comparison against the exact form.
template <class T>
Tensor<T> gelu_tanh(const Tensor<T>& x)
{
    constexpr double c = 0.79788456080286535588;  // sqrt(2/pi)
    return map(x, [](T v) {
        return T{0.5} * v * (T{1} + std::tanh(static_cast<T>(c) * (v + T{0.044715} * v * v * v)));
    });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    return zip(a, b, std::plus<T>{}, "add");
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    return zip(a, b, std::multiplies<T>{}, "mul");
}

// Adds a length-n vector to every row of an m x n matrix.
template <class T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row)
{
    require_rank2(a, "add_row");
    const std::size_t n = a.dim(1);
    if (row.size() != n) {
        throw DimensionError("add_row: bias " + shape_to_string(row.shape()) + " does not match columns of " +
                             shape_to_string(a.shape()));
    }
    Tensor<T> y = a;
    auto yd = y.mutable_data();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += row[i % n];
    return y;
}

template <class T>
T sum(const Tensor<T>& a)
{
    T s{0};
    for (T v : a.data()) s += v;
    return s;
}

// Concatenates matrices along axis 0 (rows) or 1 (columns).
template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis)
{
    if (parts.empty()) throw DimensionError("concat: no operands");
    if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
    for (const auto& p : parts) require_rank2(p, "concat");
    const std::size_t fixed = parts[0].dim(1 - axis);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.dim(1 - axis) != fixed) {
            throw DimensionError("concat: " + shape_to_string(p.shape()) + " incompatible with " +
                                 shape_to_string(parts[0].shape()) + " along axis " + std::to_string(axis));
        }
        total += p.dim(axis);
    }
    if (axis == 0) {
        std::vector<T> data;
        data.reserve(total * fixed);
        for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
        return Tensor<T>(Shape{total, fixed}, std::move(data));
    }
    Tensor<T> out(Shape{fixed, total});
    std::size_t col = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < fixed; ++i)
            for (std::size_t j = 0; j < p.dim(1); ++j) out.at(i, col + j) = p.at(i, j);
        col += p.dim(1);
    }
    return out;
}

// Contiguous block [start, start+len) of a matrix along axis 0 or 1.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len)
{
    require_rank2(a, "slice");
    if (axis > 1 || len == 0 || start + len > a.dim(axis)) {
        throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") out of range along axis " + std::to_string(axis) + " of " +
                             shape_to_string(a.shape()));
    }
    if (axis == 0) {
        const std::size_t n = a.dim(1);
        std::vector<T> data(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                            a.data().begin() + static_cast<std::ptrdiff_t>((start + len) * n));
        return Tensor<T>(Shape{len, n}, std::move(data));
    }
    Tensor<T> out(Shape{a.dim(0), len});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = a.at(i, start + j);
    return out;
}

}  // namespace kernels
}  // namespace vitsvm

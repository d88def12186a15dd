#pragma once

// Differentiable tensor ops.
//
// Broadcasting (add/sub/mul/div): shapes are aligned at their trailing axes;
// two dimensions are compatible when equal or when one of them is 1, and a
// size-1 dimension is stretched. Missing leading axes count as size 1.
// Gradients of broadcast operands are summed over the stretched axes.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/rng.hpp"
#include "t3dnet/core/tensor.hpp"

namespace t3d {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

/// For each flat index of `out`, the flat index into a tensor of shape `in`
/// broadcast against it.
inline std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
    const std::size_t r = out.size();
    const std::size_t off = r - in.size();
    std::vector<std::size_t> in_stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = r; i-- > off;) {
        const std::size_t d = in[i - off];
        in_stride[i] = d == 1 ? 0 : s;
        s *= d;
    }
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> counter(r, 0);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k) {
        map[k] = pos;
        for (std::size_t i = r; i-- > 0;) {
            ++counter[i];
            pos += in_stride[i];
            if (counter[i] < out[i]) break;
            pos -= in_stride[i] * counter[i];
            counter[i] = 0;
        }
    }
    return map;
}

/// Splits a shape at `axis` into (outer, axis, inner) extents.
inline std::array<std::size_t, 3> split_axis(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da, DB db) {
    if (a.shape() == b.shape()) {
        const std::size_t n = a.numel();
        std::vector<T> out(n);
        auto x = a.data();
        auto y = b.data();
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i], y[i]);
        return make_result<T>(op, a.shape(), std::move(out), {a.impl(), b.impl()},
                              [da, db](TensorImpl<T>& o) {
                                  auto& A = *o.node->inputs[0];
                                  auto& B = *o.node->inputs[1];
                                  const std::size_t n = o.data.size();
                                  if (A.requires_grad) {
                                      auto& g = A.grad_buffer();
                                      for (std::size_t i = 0; i < n; ++i)
                                          g[i] += o.grad[i] * da(A.data[i], B.data[i], o.data[i]);
                                  }
                                  if (B.requires_grad) {
                                      auto& g = B.grad_buffer();
                                      for (std::size_t i = 0; i < n; ++i)
                                          g[i] += o.grad[i] * db(A.data[i], B.data[i], o.data[i]);
                                  }
                              });
    }
    Shape shape = broadcast_shape(a.shape(), b.shape(), op);
    auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(shape, a.shape()));
    auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(shape, b.shape()));
    const std::size_t n = shape_numel(shape);
    std::vector<T> out(n);
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[(*ia)[i]], y[(*ib)[i]]);
    return make_result<T>(op, shape, std::move(out), {a.impl(), b.impl()}, [ia, ib, da, db](TensorImpl<T>& o) {
        auto& A = *o.node->inputs[0];
        auto& B = *o.node->inputs[1];
        const std::size_t n = o.data.size();
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                g[(*ia)[i]] += o.grad[i] * da(A.data[(*ia)[i]], B.data[(*ib)[i]], o.data[i]);
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                g[(*ib)[i]] += o.grad[i] * db(A.data[(*ia)[i]], B.data[(*ib)[i]], o.data[i]);
        }
    });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const char* op, const Tensor<T>& a, Fwd fwd, Deriv deriv, bool check_finite = true) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    auto x = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i]);
    return make_result<T>(op, a.shape(), std::move(out), {a.impl()}, [deriv](TensorImpl<T>& o) {
        auto& A = *o.node->inputs[0];
        auto& g = A.grad_buffer();
        for (std::size_t i = 0; i < o.data.size(); ++i) g[i] += o.grad[i] * deriv(A.data[i], o.data[i]);
    }, check_finite);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (T v : b.data())
        if (v == T(0)) throw NumericError("div: division by zero");
    return detail::binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

/// Multiplication by a constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::unary_op<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary_op<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) { return scale(a, T(-1)); }

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); },
        false);
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    auto x = a.data();
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] > T(0))) throw NumericError("log: argument " + std::to_string(x[i]) + " outside (0, inf)");
    return detail::unary_op<T>("log", a, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw DimensionError("reshape: " + detail::shape_str(a.shape()) + " -> " + detail::shape_str(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return detail::make_result<T>("reshape", std::move(shape), std::move(out), {a.impl()}, [](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }, false);
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = T(0);
    for (T v : a.data()) s += v;
    return detail::make_result<T>("sum", {1}, {s}, {a.impl()}, [](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (auto& v : g) v += o.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const T inv = T(1) / static_cast<T>(a.numel());
    T s = T(0);
    for (T v : a.data()) s += v;
    return detail::make_result<T>("mean", {1}, {s * inv}, {a.impl()}, [inv](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (auto& v : g) v += o.grad[0] * inv;
    });
}

namespace detail {
inline Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out.push_back(s[i]);
    if (out.empty()) out.push_back(1);
    return out;
}
}  // namespace detail

/// Sum over one axis; the axis is removed from the shape.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
    if (axis >= a.rank()) throw DimensionError("sum_axis: axis out of range for " + detail::shape_str(a.shape()));
    auto [outer, n, inner] = detail::split_axis(a.shape(), axis);
    std::vector<T> out(outer * inner, T(0));
    auto x = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
    return detail::make_result<T>("sum_axis", detail::drop_axis(a.shape(), axis), std::move(out), {a.impl()},
                                  [outer, n, inner](TensorImpl<T>& r) {
                                      auto& g = r.node->inputs[0]->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t k = 0; k < n; ++k)
                                              for (std::size_t i = 0; i < inner; ++i)
                                                  g[(o * n + k) * inner + i] += r.grad[o * inner + i];
                                  });
}

/// Maximum over one axis; the axis is removed. Ties route the gradient to the
/// lowest index along the axis.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& a, std::size_t axis) {
    if (axis >= a.rank()) throw DimensionError("max_axis: axis out of range for " + detail::shape_str(a.shape()));
    auto [outer, n, inner] = detail::split_axis(a.shape(), axis);
    std::vector<T> out(outer * inner);
    auto arg = std::make_shared<std::vector<std::uint32_t>>(outer * inner, 0);
    auto x = a.data();
    for (std::size_t o = 0; o < outer; ++o) {
        const T* base = x.data() + o * n * inner;
        T* dst = out.data() + o * inner;
        std::uint32_t* am = arg->data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] = base[i];
        for (std::size_t k = 1; k < n; ++k) {
            const T* row = base + k * inner;
            for (std::size_t i = 0; i < inner; ++i)
                if (row[i] > dst[i]) {
                    dst[i] = row[i];
                    am[i] = static_cast<std::uint32_t>(k);
                }
        }
    }
    return detail::make_result<T>("max_axis", detail::drop_axis(a.shape(), axis), std::move(out), {a.impl()},
                                  [outer, n, inner, arg](TensorImpl<T>& r) {
                                      auto& g = r.node->inputs[0]->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < inner; ++i) {
                                              const std::size_t k = (*arg)[o * inner + i];
                                              g[(o * n + k) * inner + i] += r.grad[o * inner + i];
                                          }
                                  },
                                  false);
}

/// Max over consecutive groups of k rows: [G*k x C] -> [G x C]. Same values and
/// tie rule as max_axis(reshape(x, {G, k, C}), 1) without the copy.
template <typename T>
Tensor<T> group_max(const Tensor<T>& x, std::size_t k) {
    if (x.rank() != 2 || k == 0 || x.dim(0) % k != 0)
        throw DimensionError("group_max: " + detail::shape_str(x.shape()) + " is not a stack of groups of " +
                             std::to_string(k) + " rows");
    const std::size_t groups = x.dim(0) / k, c = x.dim(1);
    std::vector<T> out(groups * c);
    auto arg = std::make_shared<std::vector<std::uint32_t>>(groups * c, 0);
    const T* src = x.data().data();
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const T* base = src + gi * k * c;
        T* dst = out.data() + gi * c;
        std::uint32_t* am = arg->data() + gi * c;
        std::copy_n(base, c, dst);
        for (std::size_t m = 1; m < k; ++m) {
            const T* row = base + m * c;
            for (std::size_t j = 0; j < c; ++j)
                if (row[j] > dst[j]) {
                    dst[j] = row[j];
                    am[j] = static_cast<std::uint32_t>(m);
                }
        }
    }
    return detail::make_result<T>(
        "group_max", {groups, c}, std::move(out), {x.impl()},
        [groups, k, c, arg](TensorImpl<T>& r) {
            T* g = r.node->inputs[0]->grad_buffer().data();
            for (std::size_t gi = 0; gi < groups; ++gi)
                for (std::size_t j = 0; j < c; ++j) g[(gi * k + (*arg)[gi * c + j]) * c + j] += r.grad[gi * c + j];
        },
        false);
}

// ---------------------------------------------------------------------------
// Softmax family (over the last axis)

namespace detail {
template <typename T>
void softmax_rows(std::span<const T> x, std::size_t rows, std::size_t cols, std::vector<T>& out, bool log_space) {
    out.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * cols;
        T* dst = out.data() + r * cols;
        T m = in[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, in[c]);
        T s = T(0);
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] - m);
        if (log_space) {
            const T lse = m + std::log(s);
            for (std::size_t c = 0; c < cols; ++c) dst[c] = in[c] - lse;
        } else {
            for (std::size_t c = 0; c < cols; ++c) dst[c] = std::exp(in[c] - m) / s;
        }
    }
}
}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    std::vector<T> out;
    detail::softmax_rows<T>(a.data(), rows, cols, out, false);
    return detail::make_result<T>("softmax", a.shape(), std::move(out), {a.impl()}, [rows, cols](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* s = o.data.data() + r * cols;
            const T* go = o.grad.data() + r * cols;
            T dot = T(0);
            for (std::size_t c = 0; c < cols; ++c) dot += go[c] * s[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += s[c] * (go[c] - dot);
        }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
    const std::size_t cols = a.shape().back();
    const std::size_t rows = a.numel() / cols;
    std::vector<T> out;
    detail::softmax_rows<T>(a.data(), rows, cols, out, true);
    return detail::make_result<T>("log_softmax", a.shape(), std::move(out), {a.impl()}, [rows, cols](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* ls = o.data.data() + r * cols;
            const T* go = o.grad.data() + r * cols;
            T total = T(0);
            for (std::size_t c = 0; c < cols; ++c) total += go[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += go[c] - std::exp(ls[c]) * total;
        }
    });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + detail::shape_str(ref));
    Shape shape = ref;
    shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
        if (!ok) throw DimensionError("concat: " + detail::shape_str(s) + " incompatible with " + detail::shape_str(ref));
        shape[axis] += s[axis];
    }
    auto [outer, total, inner] = detail::split_axis(shape, axis);
    std::vector<T> out(shape_numel(shape));
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        auto x = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.data() + o * w, w, out.data() + o * total * inner + offset);
        widths.push_back(w);
        offset += w;
        inputs.push_back(p.impl());
    }
    const std::size_t row = total * inner;
    return detail::make_result<T>("concat", shape, std::move(out), std::move(inputs),
                                  [widths, outer = outer, row](TensorImpl<T>& o) {
                                      std::size_t offset = 0;
                                      for (std::size_t k = 0; k < widths.size(); ++k) {
                                          auto& in = *o.node->inputs[k];
                                          if (in.requires_grad) {
                                              auto& g = in.grad_buffer();
                                              for (std::size_t r = 0; r < outer; ++r)
                                                  for (std::size_t j = 0; j < widths[k]; ++j)
                                                      g[r * widths[k] + j] += o.grad[r * row + offset + j];
                                          }
                                          offset += widths[k];
                                      }
                                  },
                                  false);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + detail::shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    detail::Map<T>(out.data(), n, m) = detail::MapC<T>(a.data().data(), m, n).transpose();
    return detail::make_result<T>("transpose", {n, m}, std::move(out), {a.impl()}, [m, n](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        detail::Map<T>(g.data(), m, n) += detail::MapC<T>(o.grad.data(), n, m).transpose();
    }, false);
}

/// Matrix product of a [M x K] and b [K x N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                             detail::shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    detail::Map<T>(out.data(), m, n).noalias() =
        detail::MapC<T>(a.data().data(), m, k) * detail::MapC<T>(b.data().data(), k, n);
    return detail::make_result<T>("matmul", {m, n}, std::move(out), {a.impl(), b.impl()}, [m, k, n](TensorImpl<T>& o) {
        auto& A = *o.node->inputs[0];
        auto& B = *o.node->inputs[1];
        detail::MapC<T> G(o.grad.data(), m, n);
        if (A.requires_grad)
            detail::Map<T>(A.grad_buffer().data(), m, k).noalias() += G * detail::MapC<T>(B.data.data(), k, n).transpose();
        if (B.requires_grad)
            detail::Map<T>(B.grad_buffer().data(), k, n).noalias() += detail::MapC<T>(A.data.data(), m, k).transpose() * G;
    });
}

/// Affine map y = x W^T + b for x [R x K], W [O x K], b [O] (b may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw DimensionError("linear: input " + detail::shape_str(x.shape()) + " incompatible with weight " +
                             detail::shape_str(w.shape()));
    const bool has_bias = b.defined();
    if (has_bias && (b.rank() != 1 || b.dim(0) != w.dim(0)))
        throw DimensionError("linear: bias " + detail::shape_str(b.shape()) + " incompatible with weight " +
                             detail::shape_str(w.shape()));
    const std::size_t r = x.dim(0), k = x.dim(1), o = w.dim(0);
    std::vector<T> out(r * o);
    detail::Map<T> Y(out.data(), r, o);
    Y.noalias() = detail::MapC<T>(x.data().data(), r, k) * detail::MapC<T>(w.data().data(), o, k).transpose();
    if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), o);
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs{x.impl(), w.impl()};
    if (has_bias) inputs.push_back(b.impl());
    return detail::make_result<T>("linear", {r, o}, std::move(out), std::move(inputs), [r, k, o](TensorImpl<T>& res) {
        auto& X = *res.node->inputs[0];
        auto& W = *res.node->inputs[1];
        detail::MapC<T> G(res.grad.data(), r, o);
        if (X.requires_grad)
            detail::Map<T>(X.grad_buffer().data(), r, k).noalias() += G * detail::MapC<T>(W.data.data(), o, k);
        if (W.requires_grad)
            detail::Map<T>(W.grad_buffer().data(), o, k).noalias() += G.transpose() * detail::MapC<T>(X.data.data(), r, k);
        if (res.node->inputs.size() > 2 && res.node->inputs[2]->requires_grad) {
            T* gb = res.node->inputs[2]->grad_buffer().data();
            const T* g = res.grad.data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < o; ++j) gb[j] += g[i * o + j];
        }
    });
}

/// Rows of a matrix picked by index (rows may repeat); gradients scatter-add.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::uint32_t> index) {
    if (x.rank() != 2) throw DimensionError("gather_rows expects a matrix, got " + detail::shape_str(x.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    auto idx = std::make_shared<std::vector<std::uint32_t>>(index.begin(), index.end());
    std::vector<T> out(idx->size() * cols);
    auto src = x.data();
    for (std::size_t i = 0; i < idx->size(); ++i) {
        if ((*idx)[i] >= rows)
            throw IndexError("gather_rows: index " + std::to_string((*idx)[i]) + " >= " + std::to_string(rows));
        std::copy_n(src.data() + (*idx)[i] * cols, cols, out.data() + i * cols);
    }
    return detail::make_result<T>("gather_rows", {idx->size(), cols}, std::move(out), {x.impl()},
                                  [idx, cols](TensorImpl<T>& o) {
                                      auto& g = o.node->inputs[0]->grad_buffer();
                                      for (std::size_t i = 0; i < idx->size(); ++i) {
                                          T* dst = g.data() + (*idx)[i] * cols;
                                          const T* gi = o.grad.data() + i * cols;
                                          for (std::size_t c = 0; c < cols; ++c) dst[c] += gi[c];
                                      }
                                  },
                                  false);
}

/// Half-open column interval [begin, begin + length).
struct ColumnRange {
    std::size_t begin;
    std::size_t length;
};

/// The leading `rows` rows of a matrix restricted to a list of column ranges,
/// concatenated in order. Gradients land only inside the selected block.
template <typename T>
Tensor<T> slice_block(const Tensor<T>& w, std::size_t rows, const std::vector<ColumnRange>& ranges) {
    if (w.rank() != 2) throw DimensionError("slice_block expects a matrix, got " + detail::shape_str(w.shape()));
    const std::size_t full_cols = w.dim(1);
    if (rows == 0 || rows > w.dim(0))
        throw ContractError("slice_block: " + std::to_string(rows) + " rows requested from " +
                            detail::shape_str(w.shape()));
    std::size_t cols = 0;
    for (const auto& r : ranges) {
        if (r.begin + r.length > full_cols)
            throw ContractError("slice_block: column range exceeds matrix width " + std::to_string(full_cols));
        cols += r.length;
    }
    if (cols == 0) throw ContractError("slice_block: empty column selection");
    std::vector<T> out(rows * cols);
    auto src = w.data();
    for (std::size_t i = 0; i < rows; ++i) {
        T* dst = out.data() + i * cols;
        for (const auto& r : ranges) {
            std::copy_n(src.data() + i * full_cols + r.begin, r.length, dst);
            dst += r.length;
        }
    }
    return detail::make_result<T>("slice_block", {rows, cols}, std::move(out), {w.impl()},
                                  [rows, cols, full_cols, ranges](TensorImpl<T>& o) {
                                      auto& g = o.node->inputs[0]->grad_buffer();
                                      for (std::size_t i = 0; i < rows; ++i) {
                                          const T* gi = o.grad.data() + i * cols;
                                          for (const auto& r : ranges) {
                                              T* dst = g.data() + i * full_cols + r.begin;
                                              for (std::size_t c = 0; c < r.length; ++c) dst[c] += gi[c];
                                              gi += r.length;
                                          }
                                      }
                                  },
                                  false);
}

/// Leading `n` entries of a vector.
template <typename T>
Tensor<T> slice_leading(const Tensor<T>& v, std::size_t n) {
    if (v.rank() != 1 || n == 0 || n > v.dim(0))
        throw ContractError("slice_leading: " + std::to_string(n) + " from " + detail::shape_str(v.shape()));
    if (n == v.dim(0)) return v;
    std::vector<T> out(v.data().begin(), v.data().begin() + n);
    return detail::make_result<T>("slice_leading", {n}, std::move(out), {v.impl()}, [n](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    }, false);
}

// ---------------------------------------------------------------------------
// Normalization and regularization

/// Running statistics owned by a normalization layer (not differentiated).
template <typename T>
struct NormStats {
    std::span<T> mean;
    std::span<T> var;
};

struct BatchNormOptions {
    bool training = false;
    bool update_stats = true;
    bool relu = false;  // emit relu(bn(x)) as one op
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Per-channel batch normalization of x [R x C], optionally followed by relu.
///
/// Training mode normalizes with the biased batch variance and, when
/// update_stats is set, folds batch mean and unbiased variance into the
/// running statistics with the given momentum. Evaluation mode uses the
/// running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormStats<T> stats,
                     const BatchNormOptions& opt) {
    if (x.rank() != 2) throw DimensionError("batch_norm expects [rows x channels], got " + detail::shape_str(x.shape()));
    const std::size_t rows = x.dim(0), c = x.dim(1);
    if (gamma.numel() != c || beta.numel() != c || stats.mean.size() != c || stats.var.size() != c)
        throw DimensionError("batch_norm: parameters do not match " + std::to_string(c) + " channels");
    const T* xs = x.data().data();
    std::vector<T> mu(c), inv(c);
    if (opt.training) {
        std::vector<double> m(c, 0.0), v(c, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = xs + r * c;
            for (std::size_t j = 0; j < c; ++j) m[j] += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) m[j] /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* row = xs + r * c;
            for (std::size_t j = 0; j < c; ++j) {
                const double d = row[j] - m[j];
                v[j] += d * d;
            }
        }
        for (std::size_t j = 0; j < c; ++j) {
            const double biased = v[j] / static_cast<double>(rows);
            mu[j] = static_cast<T>(m[j]);
            inv[j] = static_cast<T>(1.0 / std::sqrt(biased + opt.eps));
            if (opt.update_stats) {
                const double mom = opt.momentum;
                stats.mean[j] = static_cast<T>((1.0 - mom) * stats.mean[j] + mom * m[j]);
                if (rows > 1) {
                    const double unbiased = v[j] / static_cast<double>(rows - 1);
                    stats.var[j] = static_cast<T>((1.0 - mom) * stats.var[j] + mom * unbiased);
                }
            }
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mu[j] = stats.mean[j];
            inv[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[j]) + opt.eps));
        }
    }
    const bool record = grad_enabled() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    auto xhat = std::make_shared<std::vector<T>>(record ? rows * c : 0);
    std::vector<T> out(rows * c);
    const T* g = gamma.data().data();
    const T* b = beta.data().data();
    const bool relu = opt.relu;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xs + r * c;
        T* dst = out.data() + r * c;
        T* hat = record ? xhat->data() + r * c : nullptr;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (in[j] - mu[j]) * inv[j];
            if (hat) hat[j] = h;
            const T y = g[j] * h + b[j];
            dst[j] = relu && !(y > T(0)) ? T(0) : y;
        }
    }
    const bool training = opt.training;
    return detail::make_result<T>(
        relu ? "batch_norm_relu" : "batch_norm", x.shape(), std::move(out), {x.impl(), gamma.impl(), beta.impl()},
        [rows, c, xhat, inv = std::move(inv), training, relu](TensorImpl<T>& o) {
            auto& X = *o.node->inputs[0];
            auto& G = *o.node->inputs[1];
            auto& B = *o.node->inputs[2];
            const T* hat = xhat->data();
            const T* y = o.data.data();
            // relu gradient folded in place: the output buffer is no longer needed
            T* go = o.grad.data();
            if (relu)
                for (std::size_t i = 0; i < rows * c; ++i)
                    if (!(y[i] > T(0))) go[i] = T(0);
            std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gr = go + r * c;
                const T* hr = hat + r * c;
                for (std::size_t j = 0; j < c; ++j) {
                    sum_g[j] += gr[j];
                    sum_gx[j] += gr[j] * hr[j];
                }
            }
            if (G.requires_grad) {
                auto& gg = G.grad_buffer();
                for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
            }
            if (B.requires_grad) {
                auto& gb = B.grad_buffer();
                for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
            }
            if (X.requires_grad) {
                T* gx = X.grad_buffer().data();
                const T* gamma = G.data.data();
                std::vector<T> k(c), a(c), bb(c);
                const T inv_n = T(1) / static_cast<T>(rows);
                for (std::size_t j = 0; j < c; ++j) {
                    k[j] = gamma[j] * inv[j];
                    a[j] = training ? inv_n * sum_g[j] : T(0);
                    bb[j] = training ? inv_n * sum_gx[j] : T(0);
                }
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* gr = go + r * c;
                    const T* hr = hat + r * c;
                    T* dst = gx + r * c;
                    for (std::size_t j = 0; j < c; ++j) dst[j] += k[j] * (gr[j] - a[j] - hr[j] * bb[j]);
                }
            }
        },
        false);
}

/// Inverted dropout: zeroes each element with probability p and scales the
/// survivors by 1/(1-p). Identity when not training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> out(x.numel());
    auto xs = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = uniform01(rng) < p ? T(0) : keep_scale;
        out[i] = xs[i] * (*mask)[i];
    }
    return detail::make_result<T>("dropout", x.shape(), std::move(out), {x.impl()}, [mask](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
    }, false);
}

// ---------------------------------------------------------------------------
// Classification loss

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects [B x C] logits, got " + detail::shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
    for (auto l : labels)
        if (l >= c) throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
    std::vector<T> logp;
    detail::softmax_rows<T>(logits.data(), b, c, logp, true);
    T loss = T(0);
    for (std::size_t i = 0; i < b; ++i) loss -= logp[i * c + labels[i]];
    loss /= static_cast<T>(b);
    auto lab = std::make_shared<std::vector<std::uint32_t>>(labels.begin(), labels.end());
    auto lp = std::make_shared<std::vector<T>>(std::move(logp));
    return detail::make_result<T>("cross_entropy", {1}, {loss}, {logits.impl()}, [b, c, lab, lp](TensorImpl<T>& o) {
        auto& g = o.node->inputs[0]->grad_buffer();
        const T s = o.grad[0] / static_cast<T>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                T p = std::exp((*lp)[i * c + j]);
                if (j == (*lab)[i]) p -= T(1);
                g[i * c + j] += s * p;
            }
    });
}

/// Index of the maximum of each row of a [B x C] matrix (lowest index on ties).
template <typename T>
std::vector<std::uint32_t> argmax_rows(const Tensor<T>& logits) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    std::vector<std::uint32_t> out(b, 0);
    auto x = logits.data();
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 1; j < c; ++j)
            if (x[i * c + j] > x[i * c + out[i]]) out[i] = static_cast<std::uint32_t>(j);
    return out;
}

}  // namespace t3d

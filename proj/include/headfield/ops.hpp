#pragma once

// Differentiable operations over Tensor. Every op validates shapes, computes
// its forward eagerly and registers an adjoint when an input requires grad.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "headfield/tensor.hpp"

namespace headfield {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Fixed-order reductions. Eigen's vectorised sums depend on buffer alignment,
// which would make gradients differ bit-wise between otherwise identical runs.
template <class T>
void add_row_sums(std::vector<T>& out, const T* g, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::int64_t c = 0; c < cols; ++c) acc += g[r * cols + c];
    out[static_cast<std::size_t>(r)] += acc;
  }
}

template <class T>
void add_col_sums(std::vector<T>& out, const T* g, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[static_cast<std::size_t>(c)] += g[r * cols + c];
}
template <class T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(s));
  }
}

// True when `suffix` equals the trailing extents of `full`.
inline bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  const auto& xs = x.values();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  auto xi = x.impl();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xi, df](const TensorImpl<T>& o) {
    auto* gx = input_grad(xi);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * df(xi->data[i], o.data[i]);
  });
}

template <class T>
void check_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are not compatible");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. `b` may have fewer leading dimensions than `a`
// (leading-dimension expansion); no other broadcasting is supported.

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcast(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % nb];
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [ai, bi](const detail::TensorImpl<T>& o) {
    if (auto* ga = detail::input_grad(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i];
    if (auto* gb = detail::input_grad(bi)) {
      const std::size_t n = gb->size();
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i % n] += o.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcast(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i % nb];
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [ai, bi](const detail::TensorImpl<T>& o) {
    if (auto* ga = detail::input_grad(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i];
    if (auto* gb = detail::input_grad(bi)) {
      const std::size_t n = gb->size();
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i % n] -= o.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_broadcast(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i % nb];
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [ai, bi](const detail::TensorImpl<T>& o) {
    const std::size_t n = bi->data.size();
    if (auto* ga = detail::input_grad(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i] * bi->data[i % n];
    if (auto* gb = detail::input_grad(bi))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i % n] += o.grad[i] * ai->data[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return detail::unary(
      x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return detail::unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
T softplus_value(T v) {
  // log(1 + e^v) without overflow.
  return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <class T>
T sigmoid_value(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return softplus_value(v); }, [](T v, T) { return sigmoid_value(v); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <class T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

/// max(x, slope*x). The derivative at exactly 0 is `slope`.
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return detail::unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

// ---------------------------------------------------------------------------
// Reductions.

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v;
  auto xi = x.impl();
  return detail::make_result<T>(Shape{1}, {total}, {&x}, [xi](const detail::TensorImpl<T>& o) {
    if (auto* gx = detail::input_grad(xi))
      for (auto& g : *gx) g += o.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> squared_norm(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.values()) total += v * v;
  auto xi = x.impl();
  return detail::make_result<T>(Shape{1}, {total}, {&x}, [xi](const detail::TensorImpl<T>& o) {
    if (auto* gx = detail::input_grad(xi))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += T(2) * xi->data[i] * o.grad[0];
  });
}

/// Sum over the last axis: [..., S] -> [...]. A rank-1 input yields shape {1}.
template <class T>
Tensor<T> sum_last(const Tensor<T>& x) {
  const auto& s = x.shape();
  const std::int64_t inner = s.back();
  const std::int64_t outer = x.numel() / inner;
  Shape out_shape(s.begin(), s.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(static_cast<std::size_t>(outer), T(0));
  const auto& xv = x.values();
  for (std::int64_t r = 0; r < outer; ++r) {
    T acc = 0;
    for (std::int64_t c = 0; c < inner; ++c) acc += xv[r * inner + c];
    out[r] = acc;
  }
  auto xi = x.impl();
  return detail::make_result<T>(std::move(out_shape), std::move(out), {&x},
                                [xi, inner, outer](const detail::TensorImpl<T>& o) {
                                  if (auto* gx = detail::input_grad(xi))
                                    for (std::int64_t r = 0; r < outer; ++r)
                                      for (std::int64_t c = 0; c < inner; ++c) (*gx)[r * inner + c] += o.grad[r];
                                });
}

/// Exclusive prefix sum along the last axis: out[..., i] = sum_{j<i} x[..., j].
template <class T>
Tensor<T> exclusive_cumsum_last(const Tensor<T>& x) {
  const std::int64_t inner = x.shape().back();
  const std::int64_t outer = x.numel() / inner;
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::int64_t r = 0; r < outer; ++r) {
    T acc = 0;
    for (std::int64_t c = 0; c < inner; ++c) {
      out[r * inner + c] = acc;
      acc += xv[r * inner + c];
    }
  }
  auto xi = x.impl();
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [xi, inner, outer](const detail::TensorImpl<T>& o) {
    auto* gx = detail::input_grad(xi);
    if (!gx) return;
    // d out[k] / d x[j] = 1 for k > j: reverse exclusive sum of the adjoint.
    for (std::int64_t r = 0; r < outer; ++r) {
      T acc = 0;
      for (std::int64_t c = inner - 1; c >= 0; --c) {
        (*gx)[r * inner + c] += acc;
        acc += o.grad[r * inner + c];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra.

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::MatMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatMap<T>(a.values().data(), m, k) * detail::ConstMatMap<T>(b.values().data(), k, n);
  auto ai = a.impl();
  auto bi = b.impl();
  return detail::make_result<T>(Shape{m, n}, std::move(out), {&a, &b},
                                [ai, bi, m, k, n](const detail::TensorImpl<T>& o) {
                                  detail::ConstMatMap<T> g(o.grad.data(), m, n);
                                  if (auto* ga = detail::input_grad(ai))
                                    detail::MatMap<T>(ga->data(), m, k).noalias() +=
                                        g * detail::ConstMatMap<T>(bi->data.data(), k, n).transpose();
                                  if (auto* gb = detail::input_grad(bi))
                                    detail::MatMap<T>(gb->data(), k, n).noalias() +=
                                        detail::ConstMatMap<T>(ai->data.data(), m, k).transpose() * g;
                                });
}

/// Affine map of rows: x[N,in] * weight[out,in]^T + bias[out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.dim(1) != weight.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw DimensionError("linear: incompatible shapes x=" + shape_string(x.shape()) + " weight=" +
                         shape_string(weight.shape()) + " bias=" + shape_string(bias.shape()));
  }
  const auto n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  std::vector<T> out(static_cast<std::size_t>(n * out_dim));
  detail::MatMap<T> y(out.data(), n, out_dim);
  y.noalias() = detail::ConstMatMap<T>(x.values().data(), n, in) *
                detail::ConstMatMap<T>(weight.values().data(), out_dim, in).transpose();
  y.rowwise() += detail::ConstVecMap<T>(bias.values().data(), out_dim).transpose();
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.impl();
  return detail::make_result<T>(
      Shape{n, out_dim}, std::move(out), {&x, &weight, &bias}, [xi, wi, bi, n, in, out_dim](const detail::TensorImpl<T>& o) {
        detail::ConstMatMap<T> g(o.grad.data(), n, out_dim);
        if (auto* gx = detail::input_grad(xi))
          detail::MatMap<T>(gx->data(), n, in).noalias() += g * detail::ConstMatMap<T>(wi->data.data(), out_dim, in);
        if (auto* gw = detail::input_grad(wi))
          detail::MatMap<T>(gw->data(), out_dim, in).noalias() +=
              g.transpose() * detail::ConstMatMap<T>(xi->data.data(), n, in);
        if (auto* gb = detail::input_grad(bi))
          detail::add_col_sums(*gb, o.grad.data(), n, out_dim);
      });
}

/// Per-pixel affine map over channels: x[C,H,W], weight[D,C], bias[D] -> [D,H,W].
template <class T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 3 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(0) ||
      bias.dim(0) != weight.dim(0)) {
    throw DimensionError("conv1x1: channel mismatch x=" + shape_string(x.shape()) + " weight=" +
                         shape_string(weight.shape()) + " bias=" + shape_string(bias.shape()));
  }
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2), d = weight.dim(0);
  const auto hw = h * w;
  std::vector<T> out(static_cast<std::size_t>(d * hw));
  detail::MatMap<T> y(out.data(), d, hw);
  y.noalias() = detail::ConstMatMap<T>(weight.values().data(), d, c) * detail::ConstMatMap<T>(x.values().data(), c, hw);
  y.colwise() += detail::ConstVecMap<T>(bias.values().data(), d);
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.impl();
  return detail::make_result<T>(
      Shape{d, h, w}, std::move(out), {&x, &weight, &bias}, [xi, wi, bi, c, d, hw](const detail::TensorImpl<T>& o) {
        detail::ConstMatMap<T> g(o.grad.data(), d, hw);
        if (auto* gx = detail::input_grad(xi))
          detail::MatMap<T>(gx->data(), c, hw).noalias() +=
              detail::ConstMatMap<T>(wi->data.data(), d, c).transpose() * g;
        if (auto* gw = detail::input_grad(wi))
          detail::MatMap<T>(gw->data(), d, c).noalias() += g * detail::ConstMatMap<T>(xi->data.data(), c, hw).transpose();
        if (auto* gb = detail::input_grad(bi)) detail::add_row_sums(*gb, o.grad.data(), d, hw);
      });
}

/// General 2D convolution with zero padding: x[C,H,W], weight[D,C,K,K], bias[D].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
  if (x.rank() != 3 || weight.rank() != 4 || bias.rank() != 1 || weight.dim(1) != x.dim(0) ||
      weight.dim(2) != weight.dim(3) || bias.dim(0) != weight.dim(0)) {
    throw DimensionError("conv2d: incompatible shapes x=" + shape_string(x.shape()) + " weight=" +
                         shape_string(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw ParameterError("conv2d: stride must be >= 1 and padding >= 0");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2), d = weight.dim(0), k = weight.dim(2);
  const auto ho = (h + 2 * padding - k) / stride + 1;
  const auto wo = (w + 2 * padding - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw DimensionError("conv2d: kernel larger than padded input " + shape_string(x.shape()));
  const auto rows = c * k * k;
  const auto cols = ho * wo;
  // im2col
  auto columns = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows * cols), T(0));
  const auto& xv = x.values();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto row = (ch * k + ky) * k + kx;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const auto iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const auto ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            (*columns)[row * cols + oy * wo + ox] = xv[(ch * h + iy) * w + ix];
          }
        }
      }
  std::vector<T> out(static_cast<std::size_t>(d * cols));
  detail::MatMap<T> y(out.data(), d, cols);
  y.noalias() = detail::ConstMatMap<T>(weight.values().data(), d, rows) * detail::ConstMatMap<T>(columns->data(), rows, cols);
  y.colwise() += detail::ConstVecMap<T>(bias.values().data(), d);
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.impl();
  return detail::make_result<T>(
      Shape{d, ho, wo}, std::move(out), {&x, &weight, &bias},
      [=](const detail::TensorImpl<T>& o) {
        detail::ConstMatMap<T> g(o.grad.data(), d, cols);
        if (auto* gw = detail::input_grad(wi))
          detail::MatMap<T>(gw->data(), d, rows).noalias() +=
              g * detail::ConstMatMap<T>(columns->data(), rows, cols).transpose();
        if (auto* gb = detail::input_grad(bi)) detail::add_row_sums(*gb, o.grad.data(), d, cols);
        if (auto* gx = detail::input_grad(xi)) {
          detail::RowMatrix<T> gcols = detail::ConstMatMap<T>(wi->data.data(), d, rows).transpose() * g;
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto row = (ch * k + ky) * k + kx;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                  const auto iy = oy * stride - padding + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const auto ix = ox * stride - padding + kx;
                    if (ix < 0 || ix >= w) continue;
                    (*gx)[(ch * h + iy) * w + ix] += gcols(row, oy * wo + ox);
                  }
                }
              }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  auto xi = x.impl();
  return detail::make_result<T>(std::move(shape), x.values(), {&x}, [xi](const detail::TensorImpl<T>& o) {
    if (auto* gx = detail::input_grad(xi))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += o.grad[i];
  });
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 2, "transpose2d");
  const auto m = x.dim(0), n = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::MatMap<T>(out.data(), n, m) = detail::ConstMatMap<T>(x.values().data(), m, n).transpose();
  auto xi = x.impl();
  return detail::make_result<T>(Shape{n, m}, std::move(out), {&x}, [xi, m, n](const detail::TensorImpl<T>& o) {
    if (auto* gx = detail::input_grad(xi))
      detail::MatMap<T>(gx->data(), m, n) += detail::ConstMatMap<T>(o.grad.data(), n, m).transpose();
  });
}

/// Concatenates rank-2 tensors [N, d_i] along the last axis.
template <class T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ParameterError("concat_last: no inputs");
  const auto rows = parts[0].dim(0);
  std::vector<std::int64_t> widths;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw DimensionError("concat_last: expected [" + std::to_string(rows) + ",*], got " + shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(rows * total));
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].values();
    const auto wd = widths[p];
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy_n(v.begin() + r * wd, wd, out.begin() + r * total + offset);
    offset += wd;
  }
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::make_result<T>(Shape{rows, total}, std::move(out), parts,
                                [impls, widths, rows, total](const detail::TensorImpl<T>& o) {
                                  std::int64_t off = 0;
                                  for (std::size_t p = 0; p < impls.size(); ++p) {
                                    const auto wd = widths[p];
                                    if (auto* g = detail::input_grad(impls[p]))
                                      for (std::int64_t r = 0; r < rows; ++r)
                                        for (std::int64_t c = 0; c < wd; ++c)
                                          (*g)[r * wd + c] += o.grad[r * total + off + c];
                                    off += wd;
                                  }
                                });
}

/// Repeats a vector [D] into rows: [N, D].
template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& v, std::int64_t rows) {
  detail::require_rank(v.shape(), 1, "broadcast_rows");
  if (rows <= 0) throw DimensionError("broadcast_rows: non-positive row count");
  const auto d = v.dim(0);
  std::vector<T> out(static_cast<std::size_t>(rows * d));
  for (std::int64_t r = 0; r < rows; ++r) std::copy(v.values().begin(), v.values().end(), out.begin() + r * d);
  auto vi = v.impl();
  return detail::make_result<T>(Shape{rows, d}, std::move(out), {&v}, [vi, rows, d](const detail::TensorImpl<T>& o) {
    if (auto* g = detail::input_grad(vi))
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < d; ++c) (*g)[c] += o.grad[r * d + c];
  });
}

/// out[n, c] = sum_s weights[n, s] * values[n, s, c].
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& weights, const Tensor<T>& values) {
  if (weights.rank() != 2 || values.rank() != 3 || values.dim(0) != weights.dim(0) || values.dim(1) != weights.dim(1)) {
    throw DimensionError("weighted_sum: incompatible shapes " + shape_string(weights.shape()) + " and " +
                         shape_string(values.shape()));
  }
  const auto n = values.dim(0), s = values.dim(1), c = values.dim(2);
  const auto& wv = weights.values();
  const auto& vv = values.values();
  std::vector<T> out(static_cast<std::size_t>(n * c), T(0));
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t i = 0; i < s; ++i) {
      const T wgt = wv[r * s + i];
      const T* src = vv.data() + (r * s + i) * c;
      T* dst = out.data() + r * c;
      for (std::int64_t k = 0; k < c; ++k) dst[k] += wgt * src[k];
    }
  auto wi = weights.impl();
  auto vi = values.impl();
  return detail::make_result<T>(Shape{n, c}, std::move(out), {&weights, &values},
                                [wi, vi, n, s, c](const detail::TensorImpl<T>& o) {
                                  auto* gw = detail::input_grad(wi);
                                  auto* gv = detail::input_grad(vi);
                                  for (std::int64_t r = 0; r < n; ++r)
                                    for (std::int64_t i = 0; i < s; ++i) {
                                      const T* go = o.grad.data() + r * c;
                                      const auto base = (r * s + i) * c;
                                      if (gw) {
                                        T acc = 0;
                                        for (std::int64_t k = 0; k < c; ++k) acc += go[k] * vi->data[base + k];
                                        (*gw)[r * s + i] += acc;
                                      }
                                      if (gv) {
                                        const T wgt = wi->data[r * s + i];
                                        for (std::int64_t k = 0; k < c; ++k) (*gv)[base + k] += wgt * go[k];
                                      }
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Image-space ops on [C, H, W] tensors.

/// Channel d is copied into output channels {r*d, ..., r*d + r - 1}.
template <class T>
Tensor<T> repeat_channels(const Tensor<T>& x, std::int64_t repeats) {
  detail::require_rank(x.shape(), 3, "repeat_channels");
  const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(c * repeats * hw));
  const auto& xv = x.values();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t r = 0; r < repeats; ++r)
      std::copy_n(xv.begin() + ch * hw, hw, out.begin() + (ch * repeats + r) * hw);
  auto xi = x.impl();
  return detail::make_result<T>(Shape{c * repeats, x.dim(1), x.dim(2)}, std::move(out), {&x},
                                [xi, c, repeats, hw](const detail::TensorImpl<T>& o) {
                                  if (auto* g = detail::input_grad(xi))
                                    for (std::int64_t ch = 0; ch < c; ++ch)
                                      for (std::int64_t r = 0; r < repeats; ++r)
                                        for (std::int64_t i = 0; i < hw; ++i)
                                          (*g)[ch * hw + i] += o.grad[(ch * repeats + r) * hw + i];
                                });
}

/// [C*f*f, H, W] -> [C, f*H, f*W]; channel offset (f*i + j) of group c lands at
/// spatial offset (i, j) of each output block.
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::int64_t factor) {
  detail::require_rank(x.shape(), 3, "pixel_shuffle");
  const auto ff = factor * factor;
  if (factor < 1 || x.dim(0) % ff != 0) {
    throw DimensionError("pixel_shuffle: channel count " + std::to_string(x.dim(0)) + " not divisible by " +
                         std::to_string(ff));
  }
  const auto c = x.dim(0) / ff, h = x.dim(1), w = x.dim(2);
  const auto ho = h * factor, wo = w * factor;
  // index map output -> input
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c * ho * wo));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        const auto i = y % factor, j = xx % factor;
        const auto in_ch = ch * ff + i * factor + j;
        (*src)[(ch * ho + y) * wo + xx] = (in_ch * h + y / factor) * w + xx / factor;
      }
  std::vector<T> out(src->size());
  const auto& xv = x.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xv[(*src)[k]];
  auto xi = x.impl();
  return detail::make_result<T>(Shape{c, ho, wo}, std::move(out), {&x}, [xi, src](const detail::TensorImpl<T>& o) {
    if (auto* g = detail::input_grad(xi))
      for (std::size_t k = 0; k < o.grad.size(); ++k) (*g)[(*src)[k]] += o.grad[k];
  });
}

/// Depthwise separable filter with fixed taps and edge-replicate padding:
/// out[y] = sum_k taps[k] * in[clamp(y + k - origin)], applied along H then W.
/// Taps are constants; only the input receives gradients.
namespace detail {

// One axis of a separable filter on [C,H,W]; `adjoint` scatters instead of gathers.
template <class T>
std::vector<T> filter_pass(const std::vector<T>& in, std::int64_t c, std::int64_t h, std::int64_t w,
                           const std::vector<T>& taps, std::int64_t origin, bool vertical, bool adjoint) {
  std::vector<T> out(in.size(), T(0));
  const auto nt = static_cast<std::int64_t>(taps.size());
  const auto len = vertical ? h : w;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t a = 0; a < h; ++a)
      for (std::int64_t b = 0; b < w; ++b) {
        const auto pos = vertical ? a : b;
        const auto idx = (ch * h + a) * w + b;
        for (std::int64_t k = 0; k < nt; ++k) {
          const auto p = std::clamp<std::int64_t>(pos + k - origin, 0, len - 1);
          const auto sidx = vertical ? (ch * h + p) * w + b : (ch * h + a) * w + p;
          if (adjoint)
            out[sidx] += taps[k] * in[idx];
          else
            out[idx] += taps[k] * in[sidx];
        }
      }
  return out;
}

}  // namespace detail

/// Depthwise separable filter with fixed taps and edge-replicate padding:
/// out[y] = sum_k taps[k] * in[clamp(y + k - origin)], applied along H then W.
/// Taps are constants; only the input receives gradients.
template <class T>
Tensor<T> separable_filter(const Tensor<T>& x, const std::vector<T>& taps, std::int64_t origin) {
  detail::require_rank(x.shape(), 3, "separable_filter");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto out = detail::filter_pass(detail::filter_pass(x.values(), c, h, w, taps, origin, true, false), c, h, w, taps,
                                 origin, false, false);
  auto xi = x.impl();
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [xi, c, h, w, taps, origin](const detail::TensorImpl<T>& o) {
    if (auto* g = detail::input_grad(xi)) {
      const auto back = detail::filter_pass(detail::filter_pass(o.grad, c, h, w, taps, origin, false, true), c, h, w,
                                            taps, origin, true, true);
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += back[i];
    }
  });
}

/// Bilinear 2x upsampling (half-pixel centres, clamped edges): [C,H,W] -> [C,2H,2W].
template <class T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 3, "bilinear_upsample2x");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ho = 2 * h, wo = 2 * w;
  // Output index o maps to source o/2 with neighbour offset -1 (even) or +1 (odd), weights 3/4, 1/4.
  auto taps = [](std::int64_t o, std::int64_t len, std::int64_t& i0, std::int64_t& i1) {
    const auto base = o / 2;
    i0 = base;
    i1 = std::clamp<std::int64_t>((o % 2 == 0) ? base - 1 : base + 1, 0, len - 1);
  };
  const auto& xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(c * ho * wo));
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ho; ++y) {
      std::int64_t y0, y1;
      taps(y, h, y0, y1);
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        std::int64_t x0, x1;
        taps(xx, w, x0, x1);
        const T* base = xv.data() + ch * h * w;
        out[(ch * ho + y) * wo + xx] = T(0.5625) * base[y0 * w + x0] + T(0.1875) * base[y0 * w + x1] +
                                       T(0.1875) * base[y1 * w + x0] + T(0.0625) * base[y1 * w + x1];
      }
    }
  auto xi = x.impl();
  return detail::make_result<T>(Shape{c, ho, wo}, std::move(out), {&x},
                                [xi, c, h, w, ho, wo, taps](const detail::TensorImpl<T>& o) {
                                  auto* g = detail::input_grad(xi);
                                  if (!g) return;
                                  for (std::int64_t ch = 0; ch < c; ++ch)
                                    for (std::int64_t y = 0; y < ho; ++y) {
                                      std::int64_t y0, y1;
                                      taps(y, h, y0, y1);
                                      for (std::int64_t xx = 0; xx < wo; ++xx) {
                                        std::int64_t x0, x1;
                                        taps(xx, w, x0, x1);
                                        const T go = o.grad[(ch * ho + y) * wo + xx];
                                        T* base = g->data() + ch * h * w;
                                        base[y0 * w + x0] += T(0.5625) * go;
                                        base[y0 * w + x1] += T(0.1875) * go;
                                        base[y1 * w + x0] += T(0.1875) * go;
                                        base[y1 * w + x1] += T(0.0625) * go;
                                      }
                                    }
                                });
}

}  // namespace headfield

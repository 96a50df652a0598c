// Copyright 2026 The coopdet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "coopdet/ad/tensor.hpp"

namespace coopdet::ad {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = A[i * k + p];
      const T* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* B, T* C) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* b = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T a = A[p * m + i];
      T* c = C + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* A, const T* B, T* C) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
  gemm_nn(m, n, k, A, bt.data(), C);
}

template <typename T>
T softplus_scalar(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Bilinear interpolation at continuous pixel coordinates (px along W, py
// along H) with integer pixel centres. Neighbours outside the grid read as
// zero.
struct BilinearStencil {
  long x0 = 0, y0 = 0;
  double fx = 0, fy = 0;
  bool finite = true;
  bool any_inside = false;
};

template <typename T>
BilinearStencil make_stencil(T px, T py, std::size_t H, std::size_t W) {
  BilinearStencil s;
  if (!std::isfinite(px) || !std::isfinite(py)) {
    s.finite = false;
    return s;
  }
  if (px <= T(-1) || py <= T(-1) || px >= T(W) || py >= T(H)) return s;
  const T fx0 = std::floor(px);
  const T fy0 = std::floor(py);
  s.x0 = static_cast<long>(fx0);
  s.y0 = static_cast<long>(fy0);
  s.fx = static_cast<double>(px - fx0);
  s.fy = static_cast<double>(py - fy0);
  s.any_inside = true;
  return s;
}

template <typename T>
void bilinear_gather(const T* map, std::size_t C, std::size_t H, std::size_t W, T px,
                     T py, T* out) {
  const auto s = make_stencil(px, py, H, W);
  if (!s.finite) {
    std::fill(out, out + C, std::numeric_limits<T>::quiet_NaN());
    return;
  }
  std::fill(out, out + C, T(0));
  if (!s.any_inside) return;
  const T fx = static_cast<T>(s.fx), fy = static_cast<T>(s.fy);
  const long xs[2] = {s.x0, s.x0 + 1};
  const long ys[2] = {s.y0, s.y0 + 1};
  const T wx[2] = {T(1) - fx, fx};
  const T wy[2] = {T(1) - fy, fy};
  const std::size_t plane = H * W;
  for (int a = 0; a < 2; ++a) {
    if (ys[a] < 0 || ys[a] >= static_cast<long>(H)) continue;
    for (int b = 0; b < 2; ++b) {
      if (xs[b] < 0 || xs[b] >= static_cast<long>(W)) continue;
      const T w = wy[a] * wx[b];
      const std::size_t off = static_cast<std::size_t>(ys[a]) * W + static_cast<std::size_t>(xs[b]);
      for (std::size_t c = 0; c < C; ++c) out[c] += w * map[c * plane + off];
    }
  }
}

// Accumulates d/dmap into gmap (may be null) and returns (d/dpx, d/dpy).
template <typename T>
std::pair<T, T> bilinear_scatter(const T* map, T* gmap, std::size_t C, std::size_t H,
                                 std::size_t W, T px, T py, const T* gout) {
  const auto s = make_stencil(px, py, H, W);
  if (!s.finite || !s.any_inside) return {T(0), T(0)};
  const T fx = static_cast<T>(s.fx), fy = static_cast<T>(s.fy);
  const std::size_t plane = H * W;
  auto inside = [&](long x, long y) {
    return x >= 0 && y >= 0 && x < static_cast<long>(W) && y < static_cast<long>(H);
  };
  const long x0 = s.x0, y0 = s.y0, x1 = x0 + 1, y1 = y0 + 1;
  const bool i00 = inside(x0, y0), i10 = inside(x1, y0), i01 = inside(x0, y1),
             i11 = inside(x1, y1);
  auto idx = [&](long x, long y) {
    return static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
  };
  T dpx = 0, dpy = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const T g = gout[c];
    const T* m = map + c * plane;
    const T v00 = i00 ? m[idx(x0, y0)] : T(0);
    const T v10 = i10 ? m[idx(x1, y0)] : T(0);
    const T v01 = i01 ? m[idx(x0, y1)] : T(0);
    const T v11 = i11 ? m[idx(x1, y1)] : T(0);
    dpx += g * ((T(1) - fy) * (v10 - v00) + fy * (v11 - v01));
    dpy += g * ((T(1) - fx) * (v01 - v00) + fx * (v11 - v10));
    if (gmap) {
      T* gm = gmap + c * plane;
      if (i00) gm[idx(x0, y0)] += g * (T(1) - fx) * (T(1) - fy);
      if (i10) gm[idx(x1, y0)] += g * fx * (T(1) - fy);
      if (i01) gm[idx(x0, y1)] += g * (T(1) - fx) * fy;
      if (i11) gm[idx(x1, y1)] += g * fx * fy;
    }
  }
  return {dpx, dpy};
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_result<T>(x.shape(), std::move(out), x.requires_grad(),
                        [xn = x.node(), df](TensorNode<T>& o) {
                          T* gx = grad_of(xn);
                          for (std::size_t i = 0; i < o.grad.size(); ++i)
                            gx[i] += o.grad[i] * df(xn->data[i], o.data[i]);
                        });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>(
      {m, n}, std::move(out), detail::any_requires_grad<T>({&a, &b}),
      [an = a.node(), bn = b.node(), m, k, n](TensorNode<T>& o) {
        if (T* ga = detail::grad_of(an))
          detail::gemm_nt(m, k, n, o.grad.data(), bn->data.data(), ga);
        if (T* gb = detail::grad_of(bn))
          detail::gemm_tn(k, n, m, an->data.data(), o.grad.data(), gb);
      });
}

// x[n×in] · w[in×out] + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0),
                  "linear: incompatible shapes " + shape_str(x.shape()) + " x " +
                      shape_str(w.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias) {
    detail::require(bias.numel() == out_dim, "linear: bias size mismatch");
  }
  std::vector<T> out(n * out_dim, T(0));
  if (has_bias) {
    for (std::size_t i = 0; i < n; ++i)
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * out_dim);
  }
  detail::gemm_nn(n, out_dim, in, x.data().data(), w.data().data(), out.data());
  return detail::make_result<T>(
      {n, out_dim}, std::move(out), detail::any_requires_grad<T>({&x, &w, &bias}),
      [xn = x.node(), wn = w.node(), bn = bias.node(), n, in, out_dim](TensorNode<T>& o) {
        if (T* gx = detail::grad_of(xn))
          detail::gemm_nt(n, in, out_dim, o.grad.data(), wn->data.data(), gx);
        if (T* gw = detail::grad_of(wn))
          detail::gemm_tn(in, out_dim, n, xn->data.data(), o.grad.data(), gw);
        if (T* gb = detail::grad_of(bn)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += o.grad[i * out_dim + j];
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require(x.rank() == 2, "transpose: expects a matrix");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_result<T>({c, r}, std::move(out), x.requires_grad(),
                                [xn = x.node(), r, c](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                      gx[i * c + j] += o.grad[j * r + i];
                                });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out),
                                detail::any_requires_grad<T>({&a, &b}),
                                [an = a.node(), bn = b.node()](TensorNode<T>& o) {
                                  if (T* ga = detail::grad_of(an))
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
                                  if (T* gb = detail::grad_of(bn))
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>(a.shape(), std::move(out),
                                detail::any_requires_grad<T>({&a, &b}),
                                [an = a.node(), bn = b.node()](TensorNode<T>& o) {
                                  if (T* ga = detail::grad_of(an))
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
                                  if (T* gb = detail::grad_of(bn))
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out),
                                detail::any_requires_grad<T>({&a, &b}),
                                [an = a.node(), bn = b.node()](TensorNode<T>& o) {
                                  if (T* ga = detail::grad_of(an))
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      ga[i] += o.grad[i] * bn->data[i];
                                  if (T* gb = detail::grad_of(bn))
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      gb[i] += o.grad[i] * an->data[i];
                                });
}

// x[m×n] + v[n] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& v) {
  detail::require(x.rank() == 2 && v.numel() == x.dim(1),
                  "add_row: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + v[j];
  return detail::make_result<T>(x.shape(), std::move(out),
                                detail::any_requires_grad<T>({&x, &v}),
                                [xn = x.node(), vn = v.node(), m, n](TensorNode<T>& o) {
                                  if (T* gx = detail::grad_of(xn))
                                    for (std::size_t i = 0; i < m * n; ++i) gx[i] += o.grad[i];
                                  if (T* gv = detail::grad_of(vn))
                                    for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j) gv[j] += o.grad[i * n + j];
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary(
      x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(
      x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// y[n, c] = x[n, c] * mul[c] + shift[c] with constant per-column coefficients.
template <typename T>
Tensor<T> column_affine(const Tensor<T>& x, const std::vector<T>& mul_c,
                        const std::vector<T>& shift_c) {
  detail::require(x.rank() == 2 && mul_c.size() == x.dim(1) && shift_c.size() == x.dim(1),
                  "column_affine: coefficient size mismatch");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] * mul_c[j] + shift_c[j];
  return detail::make_result<T>(x.shape(), std::move(out), x.requires_grad(),
                                [xn = x.node(), mul_c, n, d](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < n; ++i)
                                    for (std::size_t j = 0; j < d; ++j)
                                      gx[i * d + j] += o.grad[i * d + j] * mul_c[j];
                                });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::sigmoid_scalar(v); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::softplus_scalar(v); },
      [](T v, T) { return detail::sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// Concatenates sin(x) and cos(x) along the last axis.
template <typename T>
Tensor<T> sin_cos(const Tensor<T>& x) {
  detail::require(x.rank() >= 1, "sin_cos: rank-0 input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(d, 1);
  Shape shape = x.shape();
  shape.back() = 2 * d;
  std::vector<T> out(2 * x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      out[r * 2 * d + j] = std::sin(x[r * d + j]);
      out[r * 2 * d + d + j] = std::cos(x[r * d + j]);
    }
  return detail::make_result<T>(std::move(shape), std::move(out), x.requires_grad(),
                                [xn = x.node(), rows, d](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t j = 0; j < d; ++j) {
                                      const T v = xn->data[r * d + j];
                                      gx[r * d + j] += o.grad[r * 2 * d + j] * std::cos(v) -
                                                       o.grad[r * 2 * d + d + j] * std::sin(v);
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Normalisation

// Normalises over the last axis; gamma/beta optional (both or neither).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma = {},
                     const Tensor<T>& beta = {}, T eps = T(1e-5)) {
  detail::require(x.rank() >= 1, "layer_norm: rank-0 input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const bool affine = gamma.defined();
  if (affine) {
    detail::require(gamma.numel() == d && beta.defined() && beta.numel() == d,
                    "layer_norm: affine parameter size mismatch");
  }
  std::vector<T> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = affine ? h * gamma[j] + beta[j] : h;
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), detail::any_requires_grad<T>({&x, &gamma, &beta}),
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), rows, d, affine](TensorNode<T>& o) {
        T* gx = detail::grad_of(xn);
        T* gg = affine ? detail::grad_of(gn) : nullptr;
        T* gb = affine ? detail::grad_of(bn) : nullptr;
        std::vector<T> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* go = o.grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = affine ? go[j] * gn->data[j] : go[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
            if (gg) gg[j] += go[j] * h[j];
            if (gb) gb[j] += go[j];
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          if (gx) {
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      });
}

// Numerically stable softmax along `axis`. NaN inputs propagate to the whole
// reduced slice.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  detail::require(axis < x.rank(), "softmax: axis out of range");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      T sum = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= sum;
    }
  return detail::make_result<T>(x.shape(), out, x.requires_grad(),
                                [xn = x.node(), outer, inner, len](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t a = 0; a < outer; ++a)
                                    for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t base = a * len * inner + in;
                                      T dot = 0;
                                      for (std::size_t k = 0; k < len; ++k)
                                        dot += o.grad[base + k * inner] * o.data[base + k * inner];
                                      for (std::size_t k = 0; k < len; ++k) {
                                        const std::size_t i = base + k * inner;
                                        gx[i] += o.data[i] * (o.grad[i] - dot);
                                      }
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel_of(shape) == x.numel(),
                  "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return detail::make_result<T>(std::move(shape), x.values(), x.requires_grad(),
                                [xn = x.node()](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
                                });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  detail::require(!xs.empty(), "concat: no inputs");
  Shape shape = xs.front().shape();
  detail::require(axis < shape.size(), "concat: axis out of range");
  std::size_t total = 0;
  for (const auto& t : xs) {
    detail::require(t.rank() == shape.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i != axis) {
        detail::require(t.dim(i) == shape[i],
                        "concat: shape mismatch " + shape_str(t.shape()));
      }
    }
    total += t.dim(axis);
  }
  shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<T> out(numel_of(shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& t : xs) {
    const std::size_t w = t.dim(axis) * inner;
    widths.push_back(w);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.data().data() + o * w, w, out.data() + o * total * inner + offset);
    offset += w;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& t : xs) nodes.push_back(t.node());
  return detail::make_result<T>(std::move(shape), std::move(out), detail::any_requires_grad(xs),
                                [nodes, widths, outer, total, inner](TensorNode<T>& o) {
                                  std::size_t off = 0;
                                  for (std::size_t t = 0; t < nodes.size(); ++t) {
                                    if (T* g = detail::grad_of(nodes[t])) {
                                      for (std::size_t a = 0; a < outer; ++a)
                                        for (std::size_t i = 0; i < widths[t]; ++i)
                                          g[a * widths[t] + i] += o.grad[a * total * inner + off + i];
                                    }
                                    off += widths[t];
                                  }
                                });
}

// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require(axis < x.rank() && begin <= end && end <= x.dim(axis),
                  "slice: range out of bounds for " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t len = x.dim(axis);
  shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t w = (end - begin) * inner;
  std::vector<T> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + o * len * inner + begin * inner, w, out.data() + o * w);
  return detail::make_result<T>(std::move(shape), std::move(out), x.requires_grad(),
                                [xn = x.node(), outer, len, inner, begin, w](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t a = 0; a < outer; ++a)
                                    for (std::size_t i = 0; i < w; ++i)
                                      gx[a * len * inner + begin * inner + i] += o.grad[a * w + i];
                                });
}

// Selects rows (first axis) by index; repeated indices accumulate gradients.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  detail::require(x.rank() >= 1, "gather_rows: rank-0 input");
  const std::size_t row = x.numel() / std::max<std::size_t>(x.dim(0), 1);
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<T> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i] < x.dim(0), "gather_rows: index out of range");
    std::copy_n(x.data().data() + rows[i] * row, row, out.data() + i * row);
  }
  return detail::make_result<T>(std::move(shape), std::move(out), x.requires_grad(),
                                [xn = x.node(), rows, row](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < rows.size(); ++i)
                                    for (std::size_t j = 0; j < row; ++j)
                                      gx[rows[i] * row + j] += o.grad[i * row + j];
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (const T v : x.data()) acc += v;
  return detail::make_result<T>({1}, {acc}, x.requires_grad(),
                                [xn = x.node()](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += o.grad[0];
                                });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(std::max<std::size_t>(x.numel(), 1)));
}

// ---------------------------------------------------------------------------
// Spatial

// Samples map[C×H×W] at normalised locations locs[P×2] (u along W, v along
// H) with align-corners mapping (u·(W−1), v·(H−1)). Neighbours falling
// outside the grid read as zero, so a location with no in-grid neighbour
// returns zero. Result is [P×C].
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& map, const Tensor<T>& locs) {
  detail::require(map.rank() == 3, "bilinear_sample: map must be C×H×W");
  detail::require(locs.rank() == 2 && locs.dim(1) == 2, "bilinear_sample: locs must be P×2");
  const std::size_t C = map.dim(0), H = map.dim(1), W = map.dim(2), P = locs.dim(0);
  const T sx = T(W > 1 ? W - 1 : 0), sy = T(H > 1 ? H - 1 : 0);
  std::vector<T> out(P * C);
  for (std::size_t p = 0; p < P; ++p)
    detail::bilinear_gather(map.data().data(), C, H, W, locs[2 * p] * sx, locs[2 * p + 1] * sy,
                            out.data() + p * C);
  return detail::make_result<T>(
      {P, C}, std::move(out), detail::any_requires_grad<T>({&map, &locs}),
      [mn = map.node(), ln = locs.node(), C, H, W, P, sx, sy](TensorNode<T>& o) {
        T* gm = detail::grad_of(mn);
        T* gl = detail::grad_of(ln);
        for (std::size_t p = 0; p < P; ++p) {
          const auto [dpx, dpy] = detail::bilinear_scatter(
              mn->data.data(), gm, C, H, W, ln->data[2 * p] * sx, ln->data[2 * p + 1] * sy,
              o.grad.data() + p * C);
          if (gl) {
            gl[2 * p] += dpx * sx;
            gl[2 * p + 1] += dpy * sy;
          }
        }
      });
}

// 2-D convolution of x[Cin×H×W] with w[Cout×Cin×k×k]; output spatial size
// floor((H + 2·pad − k)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  detail::require(x.rank() == 3 && w.rank() == 4 && w.dim(1) == x.dim(0) && w.dim(2) == w.dim(3),
                  "conv2d: incompatible shapes " + shape_str(x.shape()) + " * " +
                      shape_str(w.shape()));
  const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  detail::require(H + 2 * pad >= k && W + 2 * pad >= k && stride >= 1, "conv2d: kernel too large");
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t rows = cin * k * k, cols = Ho * Wo;
  std::vector<T> col(rows * cols, T(0));
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((c * k + ky) * k + kx) * cols;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          const T* src = x.data().data() + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            dst[oy * Wo + ox] = src[ix];
          }
        }
      }
  std::vector<T> out(cout * cols, T(0));
  if (bias.defined()) {
    detail::require(bias.numel() == cout, "conv2d: bias size mismatch");
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * cols, cols, bias[o]);
  }
  detail::gemm_nn(cout, cols, rows, w.data().data(), col.data(), out.data());
  return detail::make_result<T>(
      {cout, Ho, Wo}, std::move(out), detail::any_requires_grad<T>({&x, &w, &bias}),
      [xn = x.node(), wn = w.node(), bn = bias.node(), col = std::move(col), cin, H, W, cout, k,
       Ho, Wo, stride, pad, rows, cols](TensorNode<T>& o) {
        if (T* gw = detail::grad_of(wn)) detail::gemm_nt(cout, rows, cols, o.grad.data(), col.data(), gw);
        if (T* gb = detail::grad_of(bn)) {
          for (std::size_t oc = 0; oc < cout; ++oc)
            for (std::size_t i = 0; i < cols; ++i) gb[oc] += o.grad[oc * cols + i];
        }
        if (T* gx = detail::grad_of(xn)) {
          std::vector<T> gcol(rows * cols, T(0));
          detail::gemm_tn(rows, cols, cout, wn->data.data(), o.grad.data(), gcol.data());
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* src = gcol.data() + ((c * k + ky) * k + kx) * cols;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(H)) continue;
                  T* dst = gx + (c * H + static_cast<std::size_t>(iy)) * W;
                  for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                    dst[ix] += src[oy * Wo + ox];
                  }
                }
              }
        }
      });
}

// Nearest-neighbour 2× upsampling of x[C×H×W] cropped to [C×Ho×Wo]
// (Ho ≤ 2H, Wo ≤ 2W).
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, std::size_t Ho, std::size_t Wo) {
  detail::require(x.rank() == 3 && Ho <= 2 * x.dim(1) && Wo <= 2 * x.dim(2),
                  "upsample2x: target larger than 2x input");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<T> out(C * Ho * Wo);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx)
        out[(c * Ho + y) * Wo + xx] = x[(c * H + y / 2) * W + xx / 2];
  return detail::make_result<T>({C, Ho, Wo}, std::move(out), x.requires_grad(),
                                [xn = x.node(), C, H, W, Ho, Wo](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t y = 0; y < Ho; ++y)
                                      for (std::size_t xx = 0; xx < Wo; ++xx)
                                        gx[(c * H + y / 2) * W + xx / 2] += o.grad[(c * Ho + y) * Wo + xx];
                                });
}

// Per-segment, per-channel maximum of x[N×C] by segment id; empty segments
// yield zeros.
template <typename T>
Tensor<T> segment_max(const Tensor<T>& x, const std::vector<std::size_t>& segment,
                      std::size_t num_segments) {
  detail::require(x.rank() == 2 && segment.size() == x.dim(0), "segment_max: size mismatch");
  const std::size_t N = x.dim(0), C = x.dim(1);
  constexpr auto none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> argmax(num_segments * C, none);
  std::vector<T> out(num_segments * C, T(0));
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t s = segment[i];
    detail::require(s < num_segments, "segment_max: segment id out of range");
    for (std::size_t c = 0; c < C; ++c) {
      auto& a = argmax[s * C + c];
      if (a == none || x[i * C + c] > out[s * C + c]) {
        a = i;
        out[s * C + c] = x[i * C + c];
      }
    }
  }
  return detail::make_result<T>({num_segments, C}, std::move(out), x.requires_grad(),
                                [xn = x.node(), argmax = std::move(argmax), C](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < argmax.size(); ++i) {
                                    if (argmax[i] == none) continue;
                                    gx[argmax[i] * C + i % C] += o.grad[i];
                                  }
                                });
}

// Writes rows of x[P×C] into a zero [C×H×W] canvas at flat cell indices
// (row-major over H×W); cells must be distinct.
template <typename T>
Tensor<T> scatter_to_grid(const Tensor<T>& x, const std::vector<std::size_t>& cells,
                          std::size_t H, std::size_t W) {
  detail::require(x.rank() == 2 && cells.size() == x.dim(0), "scatter_to_grid: size mismatch");
  const std::size_t P = x.dim(0), C = x.dim(1), plane = H * W;
  std::vector<T> out(C * plane, T(0));
  for (std::size_t p = 0; p < P; ++p) {
    detail::require(cells[p] < plane, "scatter_to_grid: cell out of range");
    for (std::size_t c = 0; c < C; ++c) out[c * plane + cells[p]] = x[p * C + c];
  }
  return detail::make_result<T>({C, H, W}, std::move(out), x.requires_grad(),
                                [xn = x.node(), cells, C, plane](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t p = 0; p < cells.size(); ++p)
                                    for (std::size_t c = 0; c < C; ++c)
                                      gx[p * C + c] += o.grad[c * plane + cells[p]];
                                });
}

// Multi-scale deformable sampling.
//   levels[l]   [C×H_l×W_l], level l+1 at half the resolution of level l
//   ref_px      [Q×2] (x, y) pixel coordinates on level 0
//   offsets     [Q×(M·L·K·2)] in level cells, scaled per level by scale[l]
//   scale       [L]
//   weights     [Q×(M·L·K)]
// Sample (q,m,l,k) sits at ref_px/2^l + scale[l]·offset and is read
// bilinearly; out[q, m·C + c] = Σ_{l,k} weights · value. Result [Q×(M·C)].
template <typename T>
Tensor<T> deformable_sample(const std::vector<Tensor<T>>& levels, const Tensor<T>& ref_px,
                            const Tensor<T>& offsets, const Tensor<T>& scale,
                            const Tensor<T>& weights, std::size_t M, std::size_t K) {
  const std::size_t L = levels.size();
  detail::require(L >= 1 && scale.numel() == L, "deformable_sample: level count mismatch");
  const std::size_t C = levels[0].dim(0);
  for (const auto& lv : levels)
    detail::require(lv.rank() == 3 && lv.dim(0) == C, "deformable_sample: levels must share C");
  detail::require(ref_px.rank() == 2 && ref_px.dim(1) == 2, "deformable_sample: ref_px must be Q×2");
  const std::size_t Q = ref_px.dim(0), S = M * L * K;
  detail::require(offsets.rank() == 2 && offsets.dim(0) == Q && offsets.dim(1) == 2 * S,
                  "deformable_sample: offsets must be Q×(M·L·K·2)");
  detail::require(weights.rank() == 2 && weights.dim(0) == Q && weights.dim(1) == S,
                  "deformable_sample: weights must be Q×(M·L·K)");
  std::vector<T> out(Q * M * C, T(0));
  std::vector<T> val(C);
  auto loc = [S](const T* ref, const T* off, const T* sc, std::size_t q, std::size_t s,
                 std::size_t l, T& px, T& py) {
    const T div = T(std::size_t(1) << l);
    px = ref[2 * q] / div + sc[l] * off[(q * S + s) * 2];
    py = ref[2 * q + 1] / div + sc[l] * off[(q * S + s) * 2 + 1];
  };
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t l = 0; l < L; ++l) {
        const auto& lv = levels[l];
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t s = (m * L + l) * K + k;
          T px, py;
          loc(ref_px.data().data(), offsets.data().data(), scale.data().data(), q, s, l, px, py);
          detail::bilinear_gather(lv.data().data(), C, lv.dim(1), lv.dim(2), px, py, val.data());
          const T w = weights[q * S + s];
          T* o = out.data() + (q * M + m) * C;
          for (std::size_t c = 0; c < C; ++c) o[c] += w * val[c];
        }
      }
  const bool need = detail::any_requires_grad<T>({&ref_px, &offsets, &scale, &weights}) ||
                    detail::any_requires_grad<T>(levels);
  std::vector<std::shared_ptr<TensorNode<T>>> ln;
  for (const auto& lv : levels) ln.push_back(lv.node());
  return detail::make_result<T>(
      {Q, M * C}, std::move(out), need,
      [ln, rn = ref_px.node(), on = offsets.node(), sn = scale.node(), wn = weights.node(), Q, M,
       L, K, C, S, loc](TensorNode<T>& o) {
        T* gr = detail::grad_of(rn);
        T* go = detail::grad_of(on);
        T* gs = detail::grad_of(sn);
        T* gw = detail::grad_of(wn);
        std::vector<T> val(C), gout(C);
        for (std::size_t q = 0; q < Q; ++q)
          for (std::size_t m = 0; m < M; ++m) {
            const T* g = o.grad.data() + (q * M + m) * C;
            for (std::size_t l = 0; l < L; ++l) {
              const auto& lv = *ln[l];
              const std::size_t H = lv.shape[1], W = lv.shape[2];
              T* gmap = detail::grad_of(ln[l]);
              for (std::size_t k = 0; k < K; ++k) {
                const std::size_t s = (m * L + l) * K + k;
                T px, py;
                loc(rn->data.data(), on->data.data(), sn->data.data(), q, s, l, px, py);
                const T w = wn->data[q * S + s];
                if (gw) {
                  detail::bilinear_gather(lv.data.data(), C, H, W, px, py, val.data());
                  T acc = 0;
                  for (std::size_t c = 0; c < C; ++c) acc += g[c] * val[c];
                  gw[q * S + s] += acc;
                }
                for (std::size_t c = 0; c < C; ++c) gout[c] = w * g[c];
                const auto [dpx, dpy] =
                    detail::bilinear_scatter(lv.data.data(), gmap, C, H, W, px, py, gout.data());
                const T sc = sn->data[l];
                const T ox = on->data[(q * S + s) * 2], oy = on->data[(q * S + s) * 2 + 1];
                if (go) {
                  go[(q * S + s) * 2] += sc * dpx;
                  go[(q * S + s) * 2 + 1] += sc * dpy;
                }
                if (gs) gs[l] += ox * dpx + oy * dpy;
                if (gr) {
                  const T div = T(std::size_t(1) << l);
                  gr[2 * q] += dpx / div;
                  gr[2 * q + 1] += dpy / div;
                }
              }
            }
          }
      });
}

// Rotates each row (a, b) of x[N×2] by its own angle:
// (a cos θ − b sin θ, a sin θ + b cos θ).
template <typename T>
Tensor<T> rotate_pairs(const Tensor<T>& x, const std::vector<T>& angle) {
  detail::require(x.rank() == 2 && x.dim(1) == 2 && angle.size() == x.dim(0),
                  "rotate_pairs: x must be N×2 with N angles");
  const std::size_t N = x.dim(0);
  std::vector<T> out(2 * N);
  for (std::size_t i = 0; i < N; ++i) {
    const T c = std::cos(angle[i]), s = std::sin(angle[i]);
    out[2 * i] = c * x[2 * i] - s * x[2 * i + 1];
    out[2 * i + 1] = s * x[2 * i] + c * x[2 * i + 1];
  }
  return detail::make_result<T>({N, 2}, std::move(out), x.requires_grad(),
                                [xn = x.node(), angle, N](TensorNode<T>& o) {
                                  T* gx = detail::grad_of(xn);
                                  for (std::size_t i = 0; i < N; ++i) {
                                    const T c = std::cos(angle[i]), s = std::sin(angle[i]);
                                    const T ga = o.grad[2 * i], gb = o.grad[2 * i + 1];
                                    gx[2 * i] += c * ga + s * gb;
                                    gx[2 * i + 1] += -s * ga + c * gb;
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Attention

// Scaled dot-product attention over `heads` column groups.
// q[Nq×D], k[Nk×D], v[Nk×Dv]; mask (optional, Nq×Nk, nonzero = attend).
// Disallowed pairs receive weight exactly zero and never enter the sum; a
// row with no allowed key produces a zero output row.
template <typename T>
Tensor<T> multihead_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                              std::size_t heads, const std::vector<std::uint8_t>* mask = nullptr,
                              std::vector<T>* weights_out = nullptr) {
  detail::require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2 && q.dim(1) == k.dim(1) &&
                      k.dim(0) == v.dim(0),
                  "multihead_attention: incompatible shapes");
  const std::size_t nq = q.dim(0), nk = k.dim(0), D = q.dim(1), Dv = v.dim(1);
  detail::require(heads >= 1 && D % heads == 0 && Dv % heads == 0,
                  "multihead_attention: dims not divisible by head count");
  if (mask) detail::require(mask->size() == nq * nk, "multihead_attention: mask size mismatch");
  const std::size_t dh = D / heads, dv = Dv / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  std::vector<T> probs(heads * nq * nk, T(0));
  std::vector<T> out(nq * Dv, T(0));
  std::vector<T> logits(nk);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < nq; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < nk; ++j) {
        if (mask && !(*mask)[i * nk + j]) continue;
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i * D + h * dh + c] * k[j * D + h * dh + c];
        logits[j] = dot * inv_sqrt;
        mx = std::max(mx, logits[j]);
        any = true;
      }
      if (!any) continue;
      T* p = probs.data() + (h * nq + i) * nk;
      T total = 0;
      for (std::size_t j = 0; j < nk; ++j) {
        if (mask && !(*mask)[i * nk + j]) continue;
        p[j] = std::exp(logits[j] - mx);
        total += p[j];
      }
      for (std::size_t j = 0; j < nk; ++j) {
        if (mask && !(*mask)[i * nk + j]) continue;
        p[j] /= total;
        for (std::size_t c = 0; c < dv; ++c) out[i * Dv + h * dv + c] += p[j] * v[j * Dv + h * dv + c];
      }
    }
  if (weights_out) *weights_out = probs;
  std::vector<std::uint8_t> mask_copy = mask ? *mask : std::vector<std::uint8_t>{};
  return detail::make_result<T>(
      {nq, Dv}, std::move(out), detail::any_requires_grad<T>({&q, &k, &v}),
      [qn = q.node(), kn = k.node(), vn = v.node(), probs = std::move(probs),
       mask = std::move(mask_copy), heads, nq, nk, D, Dv, dh, dv, inv_sqrt](TensorNode<T>& o) {
        T* gq = detail::grad_of(qn);
        T* gk = detail::grad_of(kn);
        T* gv = detail::grad_of(vn);
        const bool masked = !mask.empty();
        std::vector<T> dp(nk);
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < nq; ++i) {
            const T* p = probs.data() + (h * nq + i) * nk;
            const T* go = o.grad.data() + i * Dv + h * dv;
            T dot = 0;
            for (std::size_t j = 0; j < nk; ++j) {
              if (masked && !mask[i * nk + j]) {
                dp[j] = 0;
                continue;
              }
              T acc = 0;
              for (std::size_t c = 0; c < dv; ++c) acc += go[c] * vn->data[j * Dv + h * dv + c];
              dp[j] = acc;
              dot += p[j] * acc;
              if (gv)
                for (std::size_t c = 0; c < dv; ++c) gv[j * Dv + h * dv + c] += p[j] * go[c];
            }
            for (std::size_t j = 0; j < nk; ++j) {
              if (masked && !mask[i * nk + j]) continue;
              const T dl = p[j] * (dp[j] - dot) * inv_sqrt;
              if (dl == T(0)) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                if (gq) gq[i * D + h * dh + c] += dl * kn->data[j * D + h * dh + c];
                if (gk) gk[j * D + h * dh + c] += dl * qn->data[i * D + h * dh + c];
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Losses

// Sum over elements of the sigmoid focal loss for binary targets (> 0.5 is
// positive), computed from logits.
template <typename T>
Tensor<T> sigmoid_focal_loss(const Tensor<T>& logits, const std::vector<T>& targets, T alpha,
                             T gamma) {
  detail::require(targets.size() == logits.numel(), "sigmoid_focal_loss: target size mismatch");
  T total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T x = logits[i];
    const T p = detail::sigmoid_scalar(x);
    if (targets[i] > T(0.5)) {
      total += alpha * std::pow(T(1) - p, gamma) * detail::softplus_scalar(-x);
    } else {
      total += (T(1) - alpha) * std::pow(p, gamma) * detail::softplus_scalar(x);
    }
  }
  return detail::make_result<T>(
      {1}, {total}, logits.requires_grad(),
      [ln = logits.node(), targets, alpha, gamma](TensorNode<T>& o) {
        T* gl = detail::grad_of(ln);
        const T g = o.grad[0];
        for (std::size_t i = 0; i < targets.size(); ++i) {
          const T x = ln->data[i];
          const T p = detail::sigmoid_scalar(x);
          T d;
          if (targets[i] > T(0.5)) {
            d = -alpha * std::pow(T(1) - p, gamma) *
                (gamma * p * detail::softplus_scalar(-x) + (T(1) - p));
          } else {
            d = (T(1) - alpha) * std::pow(p, gamma) *
                (gamma * (T(1) - p) * detail::softplus_scalar(x) + p);
          }
          gl[i] += g * d;
        }
      });
}

}  // namespace coopdet::ad

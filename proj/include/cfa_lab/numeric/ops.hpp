#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cfa_lab/numeric/grid.hpp"

namespace cfa_lab::ops {

using cfa_lab::detail::grad_of;
using cfa_lab::detail::make_output;
using cfa_lab::detail::Node;

namespace detail_ops {

template <typename T>
void require_same(const BasicGrid<T>& a, const BasicGrid<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank4(const BasicGrid<T>& x, const char* op) {
  if (x.rank() != 4) throw DimensionError(std::string(op) + ": expected [B,C,H,W], got " + shape_str(x.shape()));
}

template <typename T, typename Fwd, typename Dfdx>
BasicGrid<T> unary(const BasicGrid<T>& x, Fwd f, Dfdx df) {
  auto in = x.values();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_output<T>(x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    auto& xn = *self.inputs[0];
    T* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(xn.value[i], self.value[i]);
  });
}

// Index helper for [B,C,H,W] with plane = H*W.
inline std::size_t at(int b, int c, int channels, std::size_t plane, std::size_t p) {
  return (static_cast<std::size_t>(b) * channels + c) * plane + p;
}

}  // namespace detail_ops

template <typename T>
BasicGrid<T> add(const BasicGrid<T>& a, const BasicGrid<T>& b) {
  detail_ops::require_same(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_output<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k)
      if (T* g = grad_of(*self.inputs[k]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
BasicGrid<T> sub(const BasicGrid<T>& a, const BasicGrid<T>& b) {
  detail_ops::require_same(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_output<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = grad_of(*self.inputs[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
BasicGrid<T> mul(const BasicGrid<T>& a, const BasicGrid<T>& b) {
  detail_ops::require_same(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_output<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (T* g = grad_of(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn.value[i];
    if (T* g = grad_of(bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an.value[i];
  });
}

template <typename T>
BasicGrid<T> scale(const BasicGrid<T>& x, T c) {
  return detail_ops::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
BasicGrid<T> sigmoid(const BasicGrid<T>& x) {
  return detail_ops::unary(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

// GELU in its tanh form, 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
// Evaluated on Eigen-owned (aligned) arrays so the vectorized tanh always
// covers the same element ranges.
template <typename T>
BasicGrid<T> gelu(const BasicGrid<T>& x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const T k = T(0.79788456080286535588), a = T(0.044715);
  auto in = x.values();
  const Arr v = Eigen::Map<const Arr>(in.data(), static_cast<Eigen::Index>(in.size()));
  Arr t = (k * (v + a * v.cube())).tanh();
  const Arr y = T(0.5) * v * (T(1) + t);
  std::vector<T> out(y.data(), y.data() + y.size());
  return make_output<T>(x.shape(), std::move(out), {x}, [t = std::move(t), k, a](Node<T>& self) {
    auto& xn = *self.inputs[0];
    T* gx = grad_of(xn);
    if (!gx) return;
    const auto n = static_cast<Eigen::Index>(self.grad.size());
    const Arr v = Eigen::Map<const Arr>(xn.value.data(), n);
    const Arr dy = Eigen::Map<const Arr>(self.grad.data(), n);
    const Arr d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t.square()) * k * (T(1) + T(3) * a * v.square());
    const Arr g = dy * d;
    for (Eigen::Index i = 0; i < n; ++i) gx[i] += g[i];
  });
}

template <typename T>
BasicGrid<T> square(const BasicGrid<T>& x) {
  return detail_ops::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicGrid<T> sum(const BasicGrid<T>& x) {
  double s = 0.0;
  for (T v : x.values()) s += v;
  return make_output<T>({1}, {static_cast<T>(s)}, {x}, [](Node<T>& self) {
    if (T* g = grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
BasicGrid<T> mean(const BasicGrid<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
BasicGrid<T> reshape(const BasicGrid<T>& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_output<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    if (T* g = grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// Concatenate [B,Ci,H,W] grids along the channel axis.
template <typename T>
BasicGrid<T> concat_channels(const std::vector<BasicGrid<T>>& xs) {
  if (xs.empty()) throw PreconditionError("concat_channels: empty input list");
  for (const auto& x : xs) detail_ops::require_rank4(x, "concat_channels");
  const int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != B || x.dim(2) != H || x.dim(3) != W)
      throw DimensionError("concat_channels: spatial/batch mismatch " + shape_str(x.shape()));
    C += x.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(B) * C * plane);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::size_t chunk = static_cast<std::size_t>(x.dim(1)) * plane;
    for (int b = 0; b < B; ++b)
      std::copy_n(x.values().begin() + b * chunk, chunk, out.begin() + detail_ops::at(b, off, C, plane, 0));
    off += x.dim(1);
  }
  return make_output<T>({B, C, H, W}, std::move(out), xs, [=](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      T* g = grad_of(in);
      if (!g) continue;
      const std::size_t chunk = static_cast<std::size_t>(in.shape[1]) * plane;
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < chunk; ++i)
          g[b * chunk + i] += self.grad[detail_ops::at(b, offsets[k], C, plane, 0) + i];
    }
  });
}

template <typename T>
BasicGrid<T> slice_channels(const BasicGrid<T>& x, int begin, int count) {
  detail_ops::require_rank4(x, "slice_channels");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (begin < 0 || count <= 0 || begin + count > C) throw DimensionError("slice_channels: range outside channel axis");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t chunk = static_cast<std::size_t>(count) * plane;
  std::vector<T> out(static_cast<std::size_t>(B) * chunk);
  for (int b = 0; b < B; ++b)
    std::copy_n(x.values().begin() + detail_ops::at(b, begin, C, plane, 0), chunk, out.begin() + b * chunk);
  return make_output<T>({B, count, H, W}, std::move(out), {x}, [=](Node<T>& self) {
    if (T* g = grad_of(*self.inputs[0]))
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < chunk; ++i) g[detail_ops::at(b, begin, C, plane, 0) + i] += self.grad[b * chunk + i];
  });
}

// Zero-pad or truncate the channel axis to `channels`.
template <typename T>
BasicGrid<T> fit_channels(const BasicGrid<T>& x, int channels) {
  detail_ops::require_rank4(x, "fit_channels");
  if (x.dim(1) == channels) return x;
  if (x.dim(1) > channels) return slice_channels(x, 0, channels);
  return concat_channels<T>({x, BasicGrid<T>::zeros({x.dim(0), channels - x.dim(1), x.dim(2), x.dim(3)})});
}

// Per-position dot product over channels: [B,C,H,W] x [B,C,H,W] -> [B,1,H,W].
template <typename T>
BasicGrid<T> channel_dot(const BasicGrid<T>& a, const BasicGrid<T>& b) {
  detail_ops::require_same(a, b, "channel_dot");
  detail_ops::require_rank4(a, "channel_dot");
  const int B = a.dim(0), C = a.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(B) * plane, T(0));
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = detail_ops::at(n, c, C, plane, p);
        out[n * plane + p] += a[i] * b[i];
      }
  return make_output<T>({B, 1, a.dim(2), a.dim(3)}, std::move(out), {a, b}, [=](Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    T* ga = grad_of(an);
    T* gb = grad_of(bn);
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = detail_ops::at(n, c, C, plane, p);
          const T go = self.grad[n * plane + p];
          if (ga) ga[i] += go * bn.value[i];
          if (gb) gb[i] += go * an.value[i];
        }
  });
}

// Softmax across the channel axis independently at every position.
template <typename T>
BasicGrid<T> softmax_channels(const BasicGrid<T>& x) {
  detail_ops::require_rank4(x, "softmax_channels");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(x.size());
  for (int n = 0; n < B; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < C; ++c) mx = std::max(mx, x[detail_ops::at(n, c, C, plane, p)]);
      T s = 0;
      for (int c = 0; c < C; ++c) {
        const auto i = detail_ops::at(n, c, C, plane, p);
        s += (out[i] = std::exp(x[i] - mx));
      }
      for (int c = 0; c < C; ++c) out[detail_ops::at(n, c, C, plane, p)] /= s;
    }
  return make_output<T>(x.shape(), std::move(out), {x}, [=](Node<T>& self) {
    T* g = grad_of(*self.inputs[0]);
    if (!g) return;
    for (int n = 0; n < B; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        T dot = 0;
        for (int c = 0; c < C; ++c) {
          const auto i = detail_ops::at(n, c, C, plane, p);
          dot += self.grad[i] * self.value[i];
        }
        for (int c = 0; c < C; ++c) {
          const auto i = detail_ops::at(n, c, C, plane, p);
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
  });
}

// w: [B,1,H,W] broadcast across the channels of v: [B,C,H,W].
template <typename T>
BasicGrid<T> mul_channel_broadcast(const BasicGrid<T>& w, const BasicGrid<T>& v) {
  detail_ops::require_rank4(w, "mul_channel_broadcast");
  detail_ops::require_rank4(v, "mul_channel_broadcast");
  if (w.dim(1) != 1 || w.dim(0) != v.dim(0) || w.dim(2) != v.dim(2) || w.dim(3) != v.dim(3))
    throw DimensionError("mul_channel_broadcast: " + shape_str(w.shape()) + " vs " + shape_str(v.shape()));
  const int B = v.dim(0), C = v.dim(1);
  const std::size_t plane = static_cast<std::size_t>(v.dim(2)) * v.dim(3);
  std::vector<T> out(v.size());
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const auto i = detail_ops::at(n, c, C, plane, p);
        out[i] = w[n * plane + p] * v[i];
      }
  return make_output<T>(v.shape(), std::move(out), {w, v}, [=](Node<T>& self) {
    auto& wn = *self.inputs[0];
    auto& vn = *self.inputs[1];
    T* gw = grad_of(wn);
    T* gv = grad_of(vn);
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          const auto i = detail_ops::at(n, c, C, plane, p);
          if (gw) gw[n * plane + p] += self.grad[i] * vn.value[i];
          if (gv) gv[i] += self.grad[i] * wn.value[n * plane + p];
        }
  });
}

// Elementwise maximum over same-shaped grids. Ties route the gradient to the
// earliest input.
template <typename T>
BasicGrid<T> max_elementwise(const std::vector<BasicGrid<T>>& xs) {
  if (xs.empty()) throw PreconditionError("max_elementwise: empty input list");
  for (const auto& x : xs) detail_ops::require_same(xs[0], x, "max_elementwise");
  const std::size_t n = xs[0].size();
  std::vector<T> out(xs[0].values().begin(), xs[0].values().end());
  std::vector<int> arg(n, 0);
  for (std::size_t k = 1; k < xs.size(); ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (xs[k][i] > out[i]) {
        out[i] = xs[k][i];
        arg[i] = static_cast<int>(k);
      }
  return make_output<T>(xs[0].shape(), std::move(out), xs, [arg = std::move(arg)](Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (T* g = grad_of(*self.inputs[arg[i]])) g[i] += self.grad[i];
  });
}

// Per-channel scale and shift: y[b,c,h,w] = gamma[c] * x[b,c,h,w] + beta[c].
template <typename T>
BasicGrid<T> channel_affine(const BasicGrid<T>& x, const BasicGrid<T>& gamma, const BasicGrid<T>& beta) {
  detail_ops::require_rank4(x, "channel_affine");
  const int B = x.dim(0), C = x.dim(1);
  if (gamma.size() != static_cast<std::size_t>(C) || beta.size() != static_cast<std::size_t>(C))
    throw DimensionError("channel_affine: channel axis expects " + std::to_string(C) + " scales");
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(x.size());
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const auto i = detail_ops::at(n, c, C, plane, p);
        out[i] = gamma[c] * x[i] + beta[c];
      }
  return make_output<T>(x.shape(), std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& gn = *self.inputs[1];
    T* gx = grad_of(xn);
    T* gg = grad_of(gn);
    T* gb = grad_of(*self.inputs[2]);
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          const auto i = detail_ops::at(n, c, C, plane, p);
          const T go = self.grad[i];
          if (gx) gx[i] += go * gn.value[c];
          if (gg) gg[c] += go * xn.value[i];
          if (gb) gb[c] += go;
        }
  });
}

// Channel-wise normalization at each position to zero mean and unit variance.
template <typename T>
BasicGrid<T> layer_norm(const BasicGrid<T>& x, T eps = T(1e-6)) {
  detail_ops::require_rank4(x, "layer_norm");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> out(x.size());
  std::vector<T> inv_std(static_cast<std::size_t>(B) * plane);
  for (int n = 0; n < B; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      T mu = 0;
      for (int c = 0; c < C; ++c) mu += x[detail_ops::at(n, c, C, plane, p)];
      mu /= static_cast<T>(C);
      T var = 0;
      for (int c = 0; c < C; ++c) {
        const T d = x[detail_ops::at(n, c, C, plane, p)] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[n * plane + p] = is;
      for (int c = 0; c < C; ++c) {
        const auto i = detail_ops::at(n, c, C, plane, p);
        out[i] = (x[i] - mu) * is;
      }
    }
  return make_output<T>(x.shape(), std::move(out), {x}, [=, inv_std = std::move(inv_std)](Node<T>& self) {
    T* g = grad_of(*self.inputs[0]);
    if (!g) return;
    for (int n = 0; n < B; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        T mg = 0, mgy = 0;
        for (int c = 0; c < C; ++c) {
          const auto i = detail_ops::at(n, c, C, plane, p);
          mg += self.grad[i];
          mgy += self.grad[i] * self.value[i];
        }
        mg /= static_cast<T>(C);
        mgy /= static_cast<T>(C);
        const T is = inv_std[n * plane + p];
        for (int c = 0; c < C; ++c) {
          const auto i = detail_ops::at(n, c, C, plane, p);
          g[i] += is * (self.grad[i] - mg - self.value[i] * mgy);
        }
      }
  });
}

}  // namespace cfa_lab::ops

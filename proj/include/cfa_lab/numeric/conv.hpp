#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "cfa_lab/numeric/grid.hpp"

namespace cfa_lab::ops {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

using cfa_lab::detail::grad_of;
using cfa_lab::detail::make_output;
using cfa_lab::detail::Node;

struct Conv2dGeometry {
  int batch, in_ch, in_h, in_w;
  int out_ch, k_h, k_w;
  int stride, padding, groups;
  int out_h, out_w;
};

inline Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int stride, int padding,
                                      int groups) {
  if (input.size() != 4) throw DimensionError("conv2d: input must be [B,Cin,H,W], got " + shape_str(input));
  if (kernel.size() != 4)
    throw DimensionError("conv2d: kernel must be [Cout,Cin/groups,kh,kw], got " + shape_str(kernel));
  if (stride <= 0) throw ConfigError("conv2d: stride must be positive");
  if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");
  if (groups <= 0 || input[1] % groups != 0 || kernel[0] % groups != 0)
    throw ConfigError("conv2d: groups must divide both channel counts");
  if (kernel[1] * groups != input[1])
    throw DimensionError("conv2d: channel axis mismatch, input has " + std::to_string(input[1]) +
                         " channels, kernel expects " + std::to_string(kernel[1] * groups));
  const int ph = input[2] + 2 * padding, pw = input[3] + 2 * padding;
  if (kernel[2] > ph) throw DimensionError("conv2d: height axis, kernel taller than padded input");
  if (kernel[3] > pw) throw DimensionError("conv2d: width axis, kernel wider than padded input");
  if ((ph - kernel[2]) % stride != 0 || (pw - kernel[3]) % stride != 0)
    throw ConfigError("conv2d: output size is not exact for stride " + std::to_string(stride) + " on " +
                      shape_str(input));
  return {input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], stride, padding,
          groups,   (ph - kernel[2]) / stride + 1, (pw - kernel[3]) / stride + 1};
}

namespace detail_conv {

// Unfolds one group's input planes into a [Cg*kh*kw, Ho*Wo] matrix.
template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, int cg, T* col) {
  const int P = g.out_h * g.out_w;
  for (int c = 0; c < cg; ++c)
    for (int ki = 0; ki < g.k_h; ++ki)
      for (int kj = 0; kj < g.k_w; ++kj) {
        T* row = col + (static_cast<std::size_t>(c) * g.k_h * g.k_w + ki * g.k_w + kj) * P;
        const T* plane = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? plane[iy * g.in_w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const Conv2dGeometry& g, int cg, T* dx) {
  const int P = g.out_h * g.out_w;
  for (int c = 0; c < cg; ++c)
    for (int ki = 0; ki < g.k_h; ++ki)
      for (int kj = 0; kj < g.k_w; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c) * g.k_h * g.k_w + ki * g.k_w + kj) * P;
        T* plane = dx + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.in_w) plane[iy * g.in_w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

// Visits, for every kernel tap k of one depthwise plane, the runs of output
// cells whose input sample lies inside the plane: f(out_start, in_start, n, k)
// where output steps by 1 and input steps by the stride.
template <typename F>
void depthwise_runs(const Conv2dGeometry& g, F&& f) {
  for (int ki = 0; ki < g.k_h; ++ki)
    for (int kj = 0; kj < g.k_w; ++kj) {
      const int ox_lo = std::max(0, (g.padding - kj + g.stride - 1) / g.stride);
      const int ox_hi = std::min(g.out_w, (g.in_w - 1 + g.padding - kj) / g.stride + 1);
      if (ox_hi <= ox_lo) continue;
      for (int oy = 0; oy < g.out_h; ++oy) {
        const int iy = oy * g.stride - g.padding + ki;
        if (iy < 0 || iy >= g.in_h) continue;
        f(oy * g.out_w + ox_lo, iy * g.in_w + ox_lo * g.stride - g.padding + kj, ox_hi - ox_lo, ki * g.k_w + kj);
      }
    }
}

// One input channel per output channel: direct loops beat a GEMM per plane.
template <typename T>
BasicGrid<T> depthwise(const BasicGrid<T>& input, const BasicGrid<T>& kernel, const BasicGrid<T>& bias,
                       const Conv2dGeometry& g) {
  const int P = g.out_h * g.out_w, KK = g.k_h * g.k_w, st = g.stride;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  std::vector<T> out(static_cast<std::size_t>(g.batch) * g.out_ch * P);
  const T* x = input.values().data();
  const T* w = kernel.values().data();
  for (int b = 0; b < g.batch; ++b)
    for (int c = 0; c < g.out_ch; ++c) {
      T* __restrict y = out.data() + (static_cast<std::size_t>(b) * g.out_ch + c) * P;
      const T* __restrict xp = x + (static_cast<std::size_t>(b) * g.in_ch + c) * in_plane;
      const T* wc = w + static_cast<std::size_t>(c) * KK;
      std::fill_n(y, P, bias[c]);
      depthwise_runs(g, [&](int o, int i, int n, int k) {
        const T wk = wc[k];
        for (int t = 0; t < n; ++t) y[o + t] += wk * xp[i + t * st];
      });
    }
  return make_output<T>(
      {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
      [g, P, KK, st, in_plane](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        T* gx = grad_of(xn);
        T* gw = grad_of(wn);
        T* gb = grad_of(*self.inputs[2]);
        for (int b = 0; b < g.batch; ++b)
          for (int c = 0; c < g.out_ch; ++c) {
            const T* __restrict dy = self.grad.data() + (static_cast<std::size_t>(b) * g.out_ch + c) * P;
            const std::size_t xo = (static_cast<std::size_t>(b) * g.in_ch + c) * in_plane;
            const T* __restrict xp = xn.value.data() + xo;
            const T* wc = wn.value.data() + static_cast<std::size_t>(c) * KK;
            if (gb) {
              T s = 0;
              for (int p = 0; p < P; ++p) s += dy[p];
              gb[c] += s;
            }
            if (gw) {
              T* gwc = gw + static_cast<std::size_t>(c) * KK;
              depthwise_runs(g, [&](int o, int i, int n, int k) {
                T acc[4] = {0, 0, 0, 0};
                int t = 0;
                for (; t + 4 <= n; t += 4)
                  for (int l = 0; l < 4; ++l) acc[l] += dy[o + t + l] * xp[i + (t + l) * st];
                for (; t < n; ++t) acc[0] += dy[o + t] * xp[i + t * st];
                gwc[k] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
              });
            }
            if (gx) {
              T* __restrict gxp = gx + xo;
              depthwise_runs(g, [&](int o, int i, int n, int k) {
                const T wk = wc[k];
                for (int t = 0; t < n; ++t) gxp[i + t * st] += wk * dy[o + t];
              });
            }
          }
      });
}

}  // namespace detail_conv

// Grouped 2-D cross-correlation. kernel: [Cout, Cin/groups, kh, kw], bias: [Cout].
template <typename T>
BasicGrid<T> conv2d(const BasicGrid<T>& input, const BasicGrid<T>& kernel, const BasicGrid<T>& bias,
                    int stride = 1, int padding = 0, int groups = 1) {
  const auto g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding, groups);
  if (bias.size() != static_cast<std::size_t>(g.out_ch))
    throw DimensionError("conv2d: bias length " + std::to_string(bias.size()) + " != Cout " +
                         std::to_string(g.out_ch));
  if (groups > 1 && groups == g.in_ch && groups == g.out_ch) return detail_conv::depthwise(input, kernel, bias, g);
  const int cg_in = g.in_ch / groups, cg_out = g.out_ch / groups;
  const int K = cg_in * g.k_h * g.k_w, P = g.out_h * g.out_w;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const bool pointwise = g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.padding == 0;

  std::vector<T> out(static_cast<std::size_t>(g.batch) * g.out_ch * P);
  // Column buffers are kept for the backward pass (a 1x1 conv reads its input directly).
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(g.batch) * groups * K * P);
  const T* x = input.values().data();
  const T* w = kernel.values().data();
  for (int b = 0; b < g.batch; ++b)
    for (int gr = 0; gr < groups; ++gr) {
      const T* in_group = x + (static_cast<std::size_t>(b) * g.in_ch + gr * cg_in) * in_plane;
      const T* col = in_group;
      if (!pointwise) {
        T* c = cols.data() + (static_cast<std::size_t>(b) * groups + gr) * K * P;
        detail_conv::im2col(in_group, g, cg_in, c);
        col = c;
      }
      MatMap<T> y(out.data() + (static_cast<std::size_t>(b) * g.out_ch + gr * cg_out) * P, cg_out, P);
      ConstMatMap<T> wm(w + static_cast<std::size_t>(gr) * cg_out * K, cg_out, K);
      y.noalias() = wm * ConstMatMap<T>(col, K, P);
      for (int o = 0; o < cg_out; ++o) y.row(o).array() += bias[gr * cg_out + o];
    }

  return make_output<T>(
      {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {input, kernel, bias},
      [g, cg_in, cg_out, K, P, in_plane, pointwise, cols = std::move(cols)](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        T* gx = grad_of(xn);
        T* gw = grad_of(wn);
        T* gb = grad_of(*self.inputs[2]);
        std::vector<T> dcol(gx && !pointwise ? static_cast<std::size_t>(K) * P : 0);
        for (int b = 0; b < g.batch; ++b)
          for (int gr = 0; gr < g.groups; ++gr) {
            ConstMatMap<T> dy(self.grad.data() + (static_cast<std::size_t>(b) * g.out_ch + gr * cg_out) * P, cg_out,
                              P);
            const std::size_t in_off = (static_cast<std::size_t>(b) * g.in_ch + gr * cg_in) * in_plane;
            const T* col = pointwise ? xn.value.data() + in_off
                                     : cols.data() + (static_cast<std::size_t>(b) * g.groups + gr) * K * P;
            if (gw) {
              MatMap<T> dw(gw + static_cast<std::size_t>(gr) * cg_out * K, cg_out, K);
              dw.noalias() += dy * ConstMatMap<T>(col, K, P).transpose();
            }
            if (gb)
              for (int o = 0; o < cg_out; ++o) {
                const T* row = dy.data() + static_cast<std::size_t>(o) * P;
                T s = 0;
                for (int p = 0; p < P; ++p) s += row[p];
                gb[gr * cg_out + o] += s;
              }
            if (gx) {
              ConstMatMap<T> wm(wn.value.data() + static_cast<std::size_t>(gr) * cg_out * K, cg_out, K);
              if (pointwise) {
                MatMap<T>(gx + in_off, K, P).noalias() += wm.transpose() * dy;
              } else {
                MatMap<T> dc(dcol.data(), K, P);
                dc.noalias() = wm.transpose() * dy;
                detail_conv::col2im(dcol.data(), g, cg_in, gx + in_off);
              }
            }
          }
      });
}

namespace detail_resample {

// One bilinear tap: four source indices (or -1 when outside) and weights.
template <typename T>
struct Tap {
  int idx[4];
  T w[4];
};

}  // namespace detail_resample

// Bilinear gather where each output position carries a precomputed tap into
// the source plane. Taps with index -1 contribute zero.
template <typename T>
BasicGrid<T> gather_bilinear(const BasicGrid<T>& input, int out_h, int out_w,
                             std::vector<detail_resample::Tap<T>> taps) {
  const int B = input.dim(0), C = input.dim(1);
  const std::size_t in_plane = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  std::vector<T> out(static_cast<std::size_t>(B) * C * out_plane, T(0));
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = input.values().data() + bc * in_plane;
    T* dst = out.data() + bc * out_plane;
    for (std::size_t p = 0; p < out_plane; ++p) {
      const auto& t = taps[p];
      T v = 0;
      for (int k = 0; k < 4; ++k)
        if (t.idx[k] >= 0) v += t.w[k] * src[t.idx[k]];
      dst[p] = v;
    }
  }
  return make_output<T>({B, C, out_h, out_w}, std::move(out), {input},
                        [B, C, in_plane, out_plane, taps = std::move(taps)](Node<T>& self) {
                          T* g = grad_of(*self.inputs[0]);
                          if (!g) return;
                          for (int bc = 0; bc < B * C; ++bc) {
                            T* dsrc = g + bc * in_plane;
                            const T* dd = self.grad.data() + bc * out_plane;
                            for (std::size_t p = 0; p < out_plane; ++p) {
                              const auto& t = taps[p];
                              for (int k = 0; k < 4; ++k)
                                if (t.idx[k] >= 0) dsrc[t.idx[k]] += t.w[k] * dd[p];
                            }
                          }
                        });
}

// Bilinear resize with half-pixel (align-corners-false) sample positions;
// source coordinates are clamped to the border. Same-size resize is a copy.
template <typename T>
BasicGrid<T> resize_bilinear(const BasicGrid<T>& input, int out_h, int out_w) {
  if (input.rank() != 4) throw DimensionError("resize_bilinear: expected [B,C,H,W], got " + shape_str(input.shape()));
  if (out_h <= 0 || out_w <= 0) throw ConfigError("resize_bilinear: output size must be positive");
  const int H = input.dim(2), W = input.dim(3);
  if (out_h == H && out_w == W) {
    std::vector<T> copy(input.values().begin(), input.values().end());
    return make_output<T>(input.shape(), std::move(copy), {input}, [](Node<T>& self) {
      if (T* g = grad_of(*self.inputs[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
  }
  auto axis = [](int out_i, int out_n, int in_n, int& lo, int& hi, T& frac) {
    T src = (static_cast<T>(out_i) + T(0.5)) * static_cast<T>(in_n) / static_cast<T>(out_n) - T(0.5);
    src = std::clamp(src, T(0), static_cast<T>(in_n - 1));
    lo = static_cast<int>(std::floor(src));
    hi = std::min(lo + 1, in_n - 1);
    frac = src - static_cast<T>(lo);
  };
  std::vector<detail_resample::Tap<T>> taps(static_cast<std::size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    int y0, y1;
    T fy;
    axis(oy, out_h, H, y0, y1, fy);
    for (int ox = 0; ox < out_w; ++ox) {
      int x0, x1;
      T fx;
      axis(ox, out_w, W, x0, x1, fx);
      taps[oy * out_w + ox] = {{y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1},
                               {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
    }
  }
  return gather_bilinear(input, out_h, out_w, std::move(taps));
}

// Affine map from output cell coordinates to input cell coordinates in
// continuous units where the center of cell (row r, col c) is (c + 0.5, r + 0.5):
//   src_x = a00 * u + a01 * v + t0,  src_y = a10 * u + a11 * v + t1.
struct Affine2d {
  double a00 = 1, a01 = 0, a10 = 0, a11 = 1, t0 = 0, t1 = 0;
};

// Bilinear resampling under an affine map; samples outside the input are 0.
template <typename T>
BasicGrid<T> affine_resample(const BasicGrid<T>& input, const Affine2d& m, int out_h, int out_w) {
  if (input.rank() != 4) throw DimensionError("affine_resample: expected [B,C,H,W], got " + shape_str(input.shape()));
  const int H = input.dim(2), W = input.dim(3);
  std::vector<detail_resample::Tap<T>> taps(static_cast<std::size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const double u = ox + 0.5, v = oy + 0.5;
      // Shift so that integer source positions are cell centers.
      const double sx = m.a00 * u + m.a01 * v + m.t0 - 0.5;
      const double sy = m.a10 * u + m.a11 * v + m.t1 - 0.5;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const T fx = static_cast<T>(sx - fx0), fy = static_cast<T>(sy - fy0);
      auto idx = [&](int y, int x) { return (y >= 0 && y < H && x >= 0 && x < W) ? y * W + x : -1; };
      taps[oy * out_w + ox] = {{idx(y0, x0), idx(y0, x0 + 1), idx(y0 + 1, x0), idx(y0 + 1, x0 + 1)},
                               {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
    }
  return gather_bilinear(input, out_h, out_w, std::move(taps));
}

// Single-head dot-product attention over all spatial positions of one
// [1,C,H,W] map: out[:,p] = sum_s softmax_s(q[:,p].k[:,s] / sqrt(C)) v[:,s].
template <typename T>
BasicGrid<T> spatial_attention(const BasicGrid<T>& q, const BasicGrid<T>& k, const BasicGrid<T>& v) {
  if (q.shape() != k.shape() || q.shape() != v.shape() || q.rank() != 4 || q.dim(0) != 1)
    throw DimensionError("spatial_attention: q/k/v must share a [1,C,H,W] shape");
  const int C = q.dim(1), P = q.dim(2) * q.dim(3);
  const T inv = T(1) / std::sqrt(static_cast<T>(C));
  ConstMatMap<T> Q(q.values().data(), C, P), Km(k.values().data(), C, P), V(v.values().data(), C, P);
  RowMatrix<T> A = (Q.transpose() * Km) * inv;  // [P,P]; row p attends over s
  for (int p = 0; p < P; ++p) {
    const T mx = A.row(p).maxCoeff();
    A.row(p) = (A.row(p).array() - mx).exp();
    A.row(p) /= A.row(p).sum();
  }
  std::vector<T> out(static_cast<std::size_t>(C) * P);
  MatMap<T>(out.data(), C, P).noalias() = V * A.transpose();
  return make_output<T>(q.shape(), std::move(out), {q, k, v}, [C, P, inv, A = std::move(A)](Node<T>& self) {
    auto& qn = *self.inputs[0];
    auto& kn = *self.inputs[1];
    auto& vn = *self.inputs[2];
    ConstMatMap<T> dO(self.grad.data(), C, P);
    ConstMatMap<T> Qm(qn.value.data(), C, P), Kn(kn.value.data(), C, P), Vm(vn.value.data(), C, P);
    if (T* gv = grad_of(vn)) MatMap<T>(gv, C, P).noalias() += dO * A;
    T* gq = grad_of(qn);
    T* gk = grad_of(kn);
    if (!gq && !gk) return;
    RowMatrix<T> dA = dO.transpose() * Vm;
    RowMatrix<T> dS = A.cwiseProduct(dA);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dS.rowwise().sum();
    dS -= A.cwiseProduct(rs.replicate(1, P));
    dS *= inv;
    if (gq) MatMap<T>(gq, C, P).noalias() += Kn * dS.transpose();
    if (gk) MatMap<T>(gk, C, P).noalias() += Qm * dS;
  });
}

}  // namespace cfa_lab::ops

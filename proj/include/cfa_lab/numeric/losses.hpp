#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cfa_lab/numeric/grid.hpp"

namespace cfa_lab::ops {

using cfa_lab::detail::grad_of;
using cfa_lab::detail::make_output;
using cfa_lab::detail::Node;

// Mean binary cross-entropy on logits against {0,1} (or soft) targets.
template <typename T>
BasicGrid<T> bce_with_logits(const BasicGrid<T>& logits, const BasicGrid<T>& target) {
  if (logits.shape() != target.shape())
    throw DimensionError("bce_with_logits: " + shape_str(logits.shape()) + " vs " + shape_str(target.shape()));
  const std::size_t n = logits.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T x = logits[i], t = target[i];
    s += std::max(x, T(0.0)) - x * t + std::log1p(std::exp(-std::fabs(x)));
  }
  return make_output<T>({1}, {static_cast<T>(s / static_cast<double>(n))}, {logits, target}, [n](Node<T>& self) {
    auto& ln = *self.inputs[0];
    auto& tn = *self.inputs[1];
    T* g = grad_of(ln);
    if (!g) return;
    const T scale = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T x = ln.value[i];
      const T p = x >= 0 ? T(1.0) / (T(1.0) + std::exp(-x)) : std::exp(x) / (T(1.0) + std::exp(x));
      g[i] += scale * (p - tn.value[i]);
    }
  });
}

// Weighted mean sum_i w_i bce_i / sum_i w_i with constant non-negative weights.
template <typename T>
BasicGrid<T> bce_with_logits(const BasicGrid<T>& logits, const BasicGrid<T>& target, const BasicGrid<T>& weight) {
  if (logits.shape() != target.shape() || logits.shape() != weight.shape())
    throw DimensionError("bce_with_logits: " + shape_str(logits.shape()) + " vs " + shape_str(target.shape()) +
                         " vs weights " + shape_str(weight.shape()));
  const std::size_t n = logits.size();
  double s = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T x = logits[i], t = target[i];
    if (weight[i] < 0) throw PreconditionError("bce_with_logits: negative weight");
    s += weight[i] * (std::max(x, T(0.0)) - x * t + std::log1p(std::exp(-std::fabs(x))));
    wsum += weight[i];
  }
  if (wsum <= 0) throw PreconditionError("bce_with_logits: weights sum to zero");
  return make_output<T>({1}, {static_cast<T>(s / wsum)}, {logits, target}, [n, wsum, weight](Node<T>& self) {
    auto& ln = *self.inputs[0];
    auto& tn = *self.inputs[1];
    T* g = grad_of(ln);
    if (!g) return;
    const T scale = self.grad[0] / static_cast<T>(wsum);
    for (std::size_t i = 0; i < n; ++i) {
      const T x = ln.value[i];
      const T p = x >= 0 ? T(1.0) / (T(1.0) + std::exp(-x)) : std::exp(x) / (T(1.0) + std::exp(x));
      g[i] += scale * weight[i] * (p - tn.value[i]);
    }
  });
}

// Smooth-L1 (beta = 1) summed over channels at cells where mask[b,0,h,w] > 0,
// divided by the number of such cells (or 1 when there are none).
template <typename T>
BasicGrid<T> masked_smooth_l1(const BasicGrid<T>& pred, const BasicGrid<T>& target, const BasicGrid<T>& mask) {
  if (pred.shape() != target.shape() || pred.rank() != 4)
    throw DimensionError("masked_smooth_l1: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const int B = pred.dim(0), C = pred.dim(1);
  const std::size_t plane = static_cast<std::size_t>(pred.dim(2)) * pred.dim(3);
  if (mask.size() != B * plane) throw DimensionError("masked_smooth_l1: mask must be [B,1,H,W]");
  T npos = T(0.0);
  for (T m : mask.values()) npos += m > 0 ? T(1.0) : T(0.0);
  const T denom = std::max(npos, T(1.0));
  double s = 0.0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        if (mask[b * plane + p] <= 0) continue;
        const std::size_t i = (static_cast<std::size_t>(b) * C + c) * plane + p;
        const T d = std::fabs(pred[i] - target[i]);
        s += d < T(1.0) ? T(0.5) * d * d : d - T(0.5);
      }
  return make_output<T>({1}, {static_cast<T>(s / denom)}, {pred, target, mask}, [=](Node<T>& self) {
    auto& pn = *self.inputs[0];
    auto& tn = *self.inputs[1];
    auto& mn = *self.inputs[2];
    T* g = grad_of(pn);
    if (!g) return;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          if (mn.value[b * plane + p] <= 0) continue;
          const std::size_t i = (static_cast<std::size_t>(b) * C + c) * plane + p;
          const T d = pn.value[i] - tn.value[i];
          const T dd = std::fabs(d) < T(1.0) ? d : (d > 0 ? T(1.0) : -T(1.0));
          g[i] += self.grad[0] * dd / denom;
        }
  });
}

// Softmax cross-entropy over the channel axis at masked cells. labels holds the
// class index per cell as a real number in [B,1,H,W].
template <typename T>
BasicGrid<T> masked_softmax_ce(const BasicGrid<T>& logits, const BasicGrid<T>& labels, const BasicGrid<T>& mask) {
  if (logits.rank() != 4) throw DimensionError("masked_softmax_ce: logits must be [B,K,H,W]");
  const int B = logits.dim(0), K = logits.dim(1);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(2)) * logits.dim(3);
  if (labels.size() != B * plane || mask.size() != B * plane)
    throw DimensionError("masked_softmax_ce: labels/mask must be [B,1,H,W]");
  T npos = T(0.0);
  for (T m : mask.values()) npos += m > 0 ? T(1.0) : T(0.0);
  const T denom = std::max(npos, T(1.0));
  std::vector<T> prob(logits.size(), T(0.0));
  double s = 0.0;
  for (int b = 0; b < B; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      if (mask[b * plane + p] <= 0) continue;
      auto at = [&](int k) { return (static_cast<std::size_t>(b) * K + k) * plane + p; };
      T mx = logits[at(0)];
      for (int k = 1; k < K; ++k) mx = std::max(mx, logits[at(k)]);
      T z = T(0.0);
      for (int k = 0; k < K; ++k) z += (prob[at(k)] = std::exp(logits[at(k)] - mx));
      for (int k = 0; k < K; ++k) prob[at(k)] /= z;
      const int label = static_cast<int>(labels[b * plane + p]);
      if (label < 0 || label >= K) throw ConfigError("masked_softmax_ce: label out of range");
      s += -(logits[at(label)] - mx - std::log(z));
    }
  return make_output<T>({1}, {static_cast<T>(s / denom)}, {logits, labels, mask},
                     [=, prob = std::move(prob)](Node<T>& self) {
                       auto& ln = *self.inputs[1];
                       auto& mn = *self.inputs[2];
                       T* g = grad_of(*self.inputs[0]);
                       if (!g) return;
                       for (int b = 0; b < B; ++b)
                         for (std::size_t p = 0; p < plane; ++p) {
                           if (mn.value[b * plane + p] <= 0) continue;
                           const int label = static_cast<int>(ln.value[b * plane + p]);
                           for (int k = 0; k < K; ++k) {
                             const std::size_t i = (static_cast<std::size_t>(b) * K + k) * plane + p;
                             g[i] += self.grad[0] * (prob[i] - (k == label ? T(1.0) : T(0.0))) / denom;
                           }
                         }
                     });
}

// Euclidean norm of the flattened difference a - b. The gradient at a == b is
// taken as zero.
template <typename T>
BasicGrid<T> l2_distance(const BasicGrid<T>& a, const BasicGrid<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("l2_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  const T norm = static_cast<T>(std::sqrt(s));
  return make_output<T>({1}, {norm}, {a, b}, [norm](Node<T>& self) {
    if (norm == T(0.0)) return;
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    T* ga = grad_of(an);
    T* gb = grad_of(bn);
    const T k = self.grad[0] / norm;
    for (std::size_t i = 0; i < an.value.size(); ++i) {
      const T d = an.value[i] - bn.value[i];
      if (ga) ga[i] += k * d;
      if (gb) gb[i] -= k * d;
    }
  });
}

}  // namespace cfa_lab::ops

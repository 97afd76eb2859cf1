#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cfa_lab/numeric/grid.hpp"
#include "cfa_lab/numeric/param_store.hpp"

namespace cfa_lab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

namespace detail {

inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

template <typename T>
double eval_scalar(const BasicGrid<T>& out) {
  if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar");
  const double v = static_cast<double>(out.item());
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace detail

// Compares the reverse-mode gradient of fn at `input` with central finite
// differences and returns the largest relative error over all elements, using
// max(|analytic|, |numeric|, 1e-6) as the denominator.
template <typename T>
double grad_check(const std::function<BasicGrid<T>(const BasicGrid<T>&)>& fn, const BasicGrid<T>& input,
                  T eps = T(1e-3)) {
  auto x = BasicGrid<T>::from(input.shape(), {input.values().begin(), input.values().end()}, true);
  auto out = fn(x);
  detail::eval_scalar(out);
  backward(out);
  std::vector<T> analytic = x.has_grad() ? std::vector<T>(x.grad().begin(), x.grad().end())
                                         : std::vector<T>(x.size(), T(0));
  double worst = 0.0;
  std::vector<T> probe(input.values().begin(), input.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T keep = probe[i];
    probe[i] = keep + eps;
    const double up = detail::eval_scalar(fn(BasicGrid<T>::from(input.shape(), probe)));
    probe[i] = keep - eps;
    const double down = detail::eval_scalar(fn(BasicGrid<T>::from(input.shape(), probe)));
    probe[i] = keep;
    const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
    worst = std::max(worst, detail::rel_error(analytic[i], numeric));
  }
  return worst;
}

// Same check over every entry of a parameter store. fn evaluates the scalar
// objective using the store's current values. `stride` > 1 samples every
// stride-th element of each entry to bound the cost on larger models.
template <typename T>
GradCheckResult grad_check_params(const std::function<BasicGrid<T>()>& fn, BasicParamStore<T>& store,
                                  T eps = T(1e-3), std::size_t stride = 1) {
  store.set_trainable(true);
  auto out = fn();
  detail::eval_scalar(out);
  backward(out);
  GradCheckResult result;
  for (auto& [name, g] : store.mutable_entries()) {
    std::vector<T> analytic = g.has_grad() ? std::vector<T>(g.grad().begin(), g.grad().end())
                                           : std::vector<T>(g.size(), T(0));
    auto& w = g.mutable_values();
    for (std::size_t i = 0; i < w.size(); i += stride) {
      const T keep = w[i];
      w[i] = keep + eps;
      const double up = detail::eval_scalar(fn());
      w[i] = keep - eps;
      const double down = detail::eval_scalar(fn());
      w[i] = keep;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      result.max_rel_error = std::max(result.max_rel_error, detail::rel_error(analytic[i], numeric));
      ++result.checked;
    }
  }
  store.zero_grad();
  return result;
}

}  // namespace cfa_lab

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cfa_lab/numeric/grid.hpp"

namespace cfa_lab {

// Named trainable grids plus Adam state. Iteration order is the lexical order
// of names, which keeps optimizer updates and checkpoints deterministic.
template <typename T>
class BasicParamStore {
 public:
  struct Moments {
    std::vector<T> m, v;
  };

  BasicGrid<T>& add(const std::string& name, BasicGrid<T> g) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    g.set_requires_grad(true);
    return entries_.emplace(name, std::move(g)).first->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const BasicGrid<T>& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const BasicGrid<T>& operator[](const std::string& name) const { return get(name); }

  const std::map<std::string, BasicGrid<T>>& entries() const { return entries_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::uint64_t step_count() const { return step_count_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, g] : entries_) n += g.size();
    return n;
  }

  // Sub-store count restricted to names starting with prefix.
  std::size_t parameter_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, g] : entries_)
      if (name.rfind(prefix, 0) == 0) n += g.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, g] : entries_) g.zero_grad();
  }

  // A frozen store records no gradients: ops that only touch frozen
  // parameters stay off the tape.
  void set_trainable(bool on) {
    for (auto& [_, g] : entries_) {
      g.set_requires_grad(on);
      g.zero_grad();
    }
  }

  bool any_grad() const {
    for (const auto& [_, g] : entries_)
      if (g.has_grad()) return true;
    return false;
  }

  // Parameters that had no path to the loss get an explicit zero gradient.
  void fill_missing_grads() {
    for (auto& [_, g] : entries_)
      if (!g.has_grad()) g.node()->ensure_grad();
  }

  // Deep copy of values (fresh nodes, no moments) in scalar type U.
  template <typename U = T>
  BasicParamStore<U> clone(bool trainable = true) const {
    BasicParamStore<U> out;
    for (const auto& [name, g] : entries_) {
      auto c = g.template cast<U>(true);
      out.add(name, c);
    }
    if (!trainable) out.set_trainable(false);
    return out;
  }

  void merge(const BasicParamStore& other) {
    for (const auto& [name, g] : other.entries_) add(name, g);
  }

  std::map<std::string, BasicGrid<T>>& mutable_entries() { return entries_; }
  std::map<std::string, Moments>& mutable_moments() { return moments_; }
  void set_step_count(std::uint64_t s) { step_count_ = s; }

 private:
  std::map<std::string, BasicGrid<T>> entries_;
  std::map<std::string, Moments> moments_;
  std::uint64_t step_count_ = 0;
};

using ParamStore = BasicParamStore<float>;

// Bias-corrected Adam over the gradients currently held by each parameter.
template <typename T>
void adam_step(BasicParamStore<T>& store, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
  if (!(lr > 0)) throw ConfigError("adam_step: learning rate must be positive");
  for (const auto& [name, g] : store.entries())
    if (!g.has_grad()) throw NumericError("adam_step: missing gradient for parameter '" + name + "'");
  const std::uint64_t t = store.step_count() + 1;
  store.set_step_count(t);
  const T c1 = T(1) - std::pow(beta1, static_cast<T>(t));
  const T c2 = T(1) - std::pow(beta2, static_cast<T>(t));
  auto& moments = store.mutable_moments();
  for (auto& [name, g] : store.mutable_entries()) {
    auto& mom = moments[name];
    if (mom.m.empty()) {
      mom.m.assign(g.size(), T(0));
      mom.v.assign(g.size(), T(0));
    }
    auto grad = g.grad();
    auto& w = g.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = beta1 * mom.m[i] + (T(1) - beta1) * grad[i];
      mom.v[i] = beta2 * mom.v[i] + (T(1) - beta2) * grad[i] * grad[i];
      const T mh = mom.m[i] / c1, vh = mom.v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

namespace init {

// Kaiming-uniform: U(-b, b), b = sqrt(6 / fan_in).
inline Grid kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Grid::from(std::move(shape), std::move(v), true);
}

inline Grid zeros(Shape shape) { return Grid::zeros(std::move(shape), true); }
inline Grid ones(Shape shape) { return Grid::full(std::move(shape), 1.0f, true); }

// 1x1 kernel [out, in, 1, 1] copying the first min(in, out) channels.
inline Grid identity_1x1(int out_channels, int in_channels) {
  std::vector<float> v(static_cast<std::size_t>(out_channels) * in_channels, 0.0f);
  for (int c = 0; c < std::min(out_channels, in_channels); ++c) v[c * in_channels + c] = 1.0f;
  return Grid::from({out_channels, in_channels, 1, 1}, std::move(v), true);
}

}  // namespace init

}  // namespace cfa_lab

#pragma once

#include <vector>

#include "cfa_lab/cfa/adapter.hpp"

namespace cfa_lab {

struct CfaTrainConfig {
  double lambda_f_adapt = 0.5, lambda_f_revert = 0.5;
  double lambda_d_adapt = 0.5, lambda_d_revert = 0.5;
  int epochs_local = 30;
  int epochs_cfa = 5;
  int steps_per_epoch = 100;  // one epoch-equivalent, in optimizer steps
  int batch_k = 4;            // world states per CFA step
  double lr_local = 1e-3;
  double lr_cfa = 1e-2;
  double neighbor_drop = 0.5;  // per-neighbor drop rate while training local models
  double delta = 40.0;         // collaboration range during local training, meters

  void validate() const {
    for (double l : {lambda_f_adapt, lambda_f_revert, lambda_d_adapt, lambda_d_revert})
      if (!(l >= 0)) throw ConfigError("cfa: loss weights must be non-negative");
    if (lambda_f_adapt + lambda_f_revert + lambda_d_adapt + lambda_d_revert <= 0)
      throw ConfigError("cfa: at least one loss weight must be positive");
    if (epochs_local < 0 || epochs_cfa < 0 || steps_per_epoch <= 0 || batch_k <= 0)
      throw ConfigError("cfa: epochs must be non-negative and steps_per_epoch, batch_k positive");
    if (!(lr_local > 0) || !(lr_cfa > 0)) throw ConfigError("cfa: learning rates must be positive");
    if (neighbor_drop < 0 || neighbor_drop > 1) throw ConfigError("cfa: neighbor_drop must lie in [0, 1]");
  }

  int local_steps() const { return epochs_local * steps_per_epoch; }
  int cfa_steps() const { return epochs_cfa * steps_per_epoch; }

  // Step decay by 0.1 at 50% and again at 83% of the budget.
  double local_lr(int step) const {
    const int n = local_steps();
    double lr = lr_local;
    if (step >= n / 2) lr *= 0.1;
    if (step >= (n * 83) / 100) lr *= 0.1;
    return lr;
  }

  // Decays by 0.1 once the first epoch-equivalent is done.
  double cfa_lr(int step) const { return step < steps_per_epoch ? lr_cfa : lr_cfa * 0.1; }
};

// K paired feature sets from shared world states. F_i and F_P come from
// the frozen local and protocol encoders; the rest are produced by the pair.
template <typename T>
struct AlignmentBatchT {
  std::vector<BasicGrid<T>> F_i, F_P;
  std::vector<BasicGrid<T>> F_iP, F_Pi, F_ii;

  std::size_t size() const { return F_i.size(); }
};

template <typename T>
struct LossPairT {
  BasicGrid<T> adapt, revert;
};

// F_iP = φ(F_i), F_Pi = ψ(F_P), F_ii = ψ(φ(F_i)).
template <typename T>
AlignmentBatchT<T> run_pair(const PairSpec& s, const BasicParamStore<T>& p, std::vector<BasicGrid<T>> F_i,
                            std::vector<BasicGrid<T>> F_P) {
  if (F_i.size() != F_P.size()) throw PreconditionError("run_pair: F_i and F_P batch sizes differ");
  AlignmentBatchT<T> b;
  b.F_i = std::move(F_i);
  b.F_P = std::move(F_P);
  for (std::size_t k = 0; k < b.size(); ++k) {
    b.F_iP.push_back(adapt(s, p, b.F_i[k]));
    b.F_Pi.push_back(revert(s, p, b.F_P[k]));
    b.F_ii.push_back(revert(s, p, b.F_iP[k]));
  }
  return b;
}

// Feature-space alignment, averaged over the batch:
//   adapt  = mean_k |F_iP - F_P|
//   revert = mean_k (|F_Pi - F_i| + |F_ii - F_i|)
// with |.| the Euclidean norm of the flattened difference.
template <typename T>
LossPairT<T> loss_feature(const AlignmentBatchT<T>& b) {
  const std::size_t K = b.size();
  if (K == 0) throw PreconditionError("loss_feature: empty batch");
  if (b.F_P.size() != K || b.F_iP.size() != K || b.F_Pi.size() != K || b.F_ii.size() != K)
    throw PreconditionError("loss_feature: batch members have different lengths");
  BasicGrid<T> la, lr;
  for (std::size_t k = 0; k < K; ++k) {
    const auto a = ops::l2_distance(b.F_iP[k], b.F_P[k]);
    const auto r = ops::add(ops::l2_distance(b.F_Pi[k], b.F_i[k]), ops::l2_distance(b.F_ii[k], b.F_i[k]));
    la = k == 0 ? a : ops::add(la, a);
    lr = k == 0 ? r : ops::add(lr, r);
  }
  const T inv = T(1) / static_cast<T>(K);
  return {ops::scale(la, inv), ops::scale(lr, inv)};
}

// A frozen model seen through its fusion and decoder only.
template <typename T>
struct FrozenHeadT {
  const AgentSpec& spec;
  const BasicParamStore<T>& params;

  BasicGrid<T> loss(const BasicGrid<T>& feature, const GroundTruth& gt) const {
    return task_loss(decode(spec, params, fuse(spec, params, std::vector<BasicGrid<T>>{feature})), gt);
  }
};

// Decision-space alignment, averaged over the batch:
//   adapt  = mean_k L_P(D_P(U_P(F_iP)), GT_P)
//   revert = mean_k [L_i(D_i(U_i(F_Pi)), GT_i) + L_i(D_i(U_i(F_ii)), GT_i)]
// Either side can be skipped by passing skip_adapt / skip_revert, in which
// case the corresponding grid is left invalid.
template <typename T>
LossPairT<T> loss_decision(const FrozenHeadT<T>& protocol, const FrozenHeadT<T>& local, const AlignmentBatchT<T>& b,
                           const std::vector<const GroundTruth*>& gt_P, const std::vector<const GroundTruth*>& gt_i,
                           bool skip_adapt = false, bool skip_revert = false) {
  const std::size_t K = b.size();
  if (K == 0) throw PreconditionError("loss_decision: empty batch");
  if ((!skip_adapt && gt_P.size() != K) || (!skip_revert && gt_i.size() != K))
    throw ConfigError("loss_decision: missing ground truth for the " +
                      std::string(gt_P.size() != K ? "protocol" : "local") + " task");
  for (const auto* g : gt_P)
    if (!g) throw ConfigError("loss_decision: missing ground truth for the protocol task");
  for (const auto* g : gt_i)
    if (!g) throw ConfigError("loss_decision: missing ground truth for the local task");
  const T inv = T(1) / static_cast<T>(K);
  LossPairT<T> out;
  if (!skip_adapt) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto l = protocol.loss(b.F_iP[k], *gt_P[k]);
      out.adapt = k == 0 ? l : ops::add(out.adapt, l);
    }
    out.adapt = ops::scale(out.adapt, inv);
  }
  if (!skip_revert) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto l = ops::add(local.loss(b.F_Pi[k], *gt_i[k]), local.loss(b.F_ii[k], *gt_i[k]));
      out.revert = k == 0 ? l : ops::add(out.revert, l);
    }
    out.revert = ops::scale(out.revert, inv);
  }
  return out;
}

// λf_a·Lf_a + λf_r·Lf_r + λd_a·Ld_a + λd_r·Ld_r, accumulated left to right.
// Terms with a zero weight are left out entirely and may be invalid grids.
template <typename T>
BasicGrid<T> total_loss(const CfaTrainConfig& cfg, const BasicGrid<T>& f_adapt, const BasicGrid<T>& f_revert,
                        const BasicGrid<T>& d_adapt, const BasicGrid<T>& d_revert) {
  const std::pair<double, const BasicGrid<T>*> terms[] = {
      {cfg.lambda_f_adapt, &f_adapt}, {cfg.lambda_f_revert, &f_revert}, {cfg.lambda_d_adapt, &d_adapt},
      {cfg.lambda_d_revert, &d_revert}};
  BasicGrid<T> acc;
  for (const auto& [lambda, g] : terms) {
    if (lambda == 0) continue;
    if (!g->valid() || g->size() != 1) throw PreconditionError("total_loss: weighted component is not a scalar");
    if (!std::isfinite(static_cast<double>(g->item()))) throw NumericError("total_loss: non-finite component");
    const auto term = ops::scale(*g, static_cast<T>(lambda));
    acc = acc.valid() ? ops::add(acc, term) : term;
  }
  if (!acc.valid()) return BasicGrid<T>::scalar(T(0));
  return acc;
}

}  // namespace cfa_lab

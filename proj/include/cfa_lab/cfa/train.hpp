#pragma once

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "cfa_lab/cfa/dataset.hpp"
#include "cfa_lab/cfa/losses.hpp"
#include "cfa_lab/pipeline/warp.hpp"

namespace cfa_lab {

struct TrainReport {
  std::vector<double> loss_curve;            // one value per optimizer step
  std::vector<double> reconstruction_curve;  // CFA only: mean |ψ(φ(F_i)) - F_i| per epoch
  int steps = 0;
  double seconds = 0;
  std::size_t trainable_parameters = 0;
};

struct TrainedModel {
  AgentModel model;
  TrainReport report;
};

struct TrainedPair {
  AdapterReverterPair pair;
  TrainReport report;
};

namespace detail_train {

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void check_finite(double loss, const char* what, int step) {
  if (!std::isfinite(loss))
    throw TrainingError(std::string(what) + ": loss became non-finite at step " + std::to_string(step));
}

}  // namespace detail_train

// Frozen copy of a model's weights: no gradients are requested or stored.
inline ParamStore frozen(const ParamStore& p) { return p.clone<float>(false); }

// Average task loss over every agent of scene s acting as ego, each fusing
// its own feature with the warped features of the neighbors it keeps.
// `keep` decides per (ego, neighbor) whether a neighbor inside delta is used.
template <typename Keep>
Grid collaborative_loss(const AgentSpec& spec, const ParamStore& p, const Dataset& d, std::size_t s, double delta,
                        Keep&& keep) {
  const Scene& sc = d.scenes.at(s);
  const std::size_t n = sc.agents.size();
  std::vector<std::vector<std::size_t>> used(n);
  std::vector<bool> needed(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    used[i].push_back(i);
    needed[i] = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dist = std::hypot(sc.agents[i].x - sc.agents[j].x, sc.agents[i].y - sc.agents[j].y);
      if (dist <= delta && keep(i, j)) {
        used[i].push_back(j);
        needed[j] = true;
      }
    }
  }
  std::vector<Grid> feats(n);
  for (std::size_t j = 0; j < n; ++j)
    if (needed[j]) feats[j] = encode(spec, p, d.frame(spec.modality, s, j));
  const int R = spec.resolution;
  Grid total;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Grid> in;
    for (std::size_t j : used[i])
      in.push_back(j == i ? feats[j] : warp_feature(feats[j], relative_pose(sc.agents[i], sc.agents[j]), R, R));
    const auto l = task_loss(decode(spec, p, fuse(spec, p, in, 0)), d.gt(spec.task, s, i));
    total = i == 0 ? l : ops::add(total, l);
  }
  return ops::scale(total, 1.0f / static_cast<float>(n));
}

// Mean collaborative loss over a dataset with every in-range neighbor kept.
inline double mean_collaborative_loss(const AgentSpec& spec, const ParamStore& p, const Dataset& d, double delta) {
  const auto f = frozen(p);
  double acc = 0;
  for (std::size_t s = 0; s < d.size(); ++s)
    acc += collaborative_loss(spec, f, d, s, delta, [](std::size_t, std::size_t) { return true; }).item();
  return d.size() ? acc / static_cast<double>(d.size()) : 0.0;
}

// Trains encoder, fusion and decoder of one model end to end on
// multi-agent scenes in which every agent runs this same model.
inline TrainedModel train_model(const AgentSpec& spec, const Dataset& d, const CfaTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (d.size() == 0) throw PreconditionError("train_model: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  TrainedModel out{AgentModel::create(spec, seed), {}};
  auto& p = out.model.params;
  std::mt19937_64 rng(derive_seed(seed, {0x7a1, static_cast<std::uint64_t>(spec.agent_id + 1)}));
  std::uniform_int_distribution<std::size_t> pick(0, d.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int steps = cfg.local_steps();
  for (int step = 0; step < steps; ++step) {
    const std::size_t s = pick(rng);
    p.zero_grad();
    const auto loss = collaborative_loss(spec, p, d, s, cfg.delta, [&](std::size_t, std::size_t) {
      return u(rng) >= cfg.neighbor_drop;
    });
    detail_train::check_finite(loss.item(), "train_model", step);
    backward(loss);
    p.fill_missing_grads();
    adam_step(p, static_cast<float>(cfg.local_lr(step)));
    out.report.loss_curve.push_back(loss.item());
  }
  out.report.steps = steps;
  out.report.trainable_parameters = p.parameter_count();
  out.report.seconds = detail_train::elapsed(t0);
  return out;
}

inline TrainedModel train_protocol(const ProtocolSpec& spec, const Dataset& d, const CfaTrainConfig& cfg,
                                   std::uint64_t seed) {
  return train_model(spec.agent_spec(), d, cfg, seed);
}

inline TrainedModel train_agent_local(const AgentSpec& spec, const Dataset& d, const CfaTrainConfig& cfg,
                                      std::uint64_t seed) {
  return train_model(spec, d, cfg, seed);
}

// Encodes every agent frame of the dataset with frozen weights: [scene][agent].
inline std::vector<std::vector<Grid>> encode_all(const AgentSpec& spec, const ParamStore& p, const Dataset& d) {
  const auto f = frozen(p);
  std::vector<std::vector<Grid>> out(d.size());
  for (std::size_t s = 0; s < d.size(); ++s)
    for (std::size_t a = 0; a < d.agents(s); ++a) out[s].push_back(encode(spec, f, d.frame(spec.modality, s, a)));
  return out;
}

// Trains φ_i and ψ_i between a frozen local model and the frozen protocol
// model. Only the pair's parameters receive gradients. Protocol features
// may be supplied precomputed (see encode_all) to share them across agents.
inline TrainedPair train_cfa_pair(const AgentModel& local, const AgentModel& protocol, const Dataset& d,
                                  const CfaTrainConfig& cfg, std::uint64_t seed, PairSpec pair_spec,
                                  const std::vector<std::vector<Grid>>* protocol_features = nullptr) {
  cfg.validate();
  if (d.size() == 0) throw PreconditionError("train_cfa_pair: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  const auto local_w = frozen(local.params), protocol_w = frozen(protocol.params);
  const auto F_i = encode_all(local.spec, local_w, d);
  const auto own_P = protocol_features ? std::vector<std::vector<Grid>>{} : encode_all(protocol.spec, protocol_w, d);
  const auto& F_P = protocol_features ? *protocol_features : own_P;
  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (std::size_t s = 0; s < d.size(); ++s)
    for (std::size_t a = 0; a < d.agents(s); ++a) items.emplace_back(s, a);

  TrainedPair out{build_pair(pair_spec, seed), {}};
  auto& p = out.pair.params;
  const FrozenHeadT<float> head_P{protocol.spec, protocol_w}, head_i{local.spec, local_w};
  const bool use_f = cfg.lambda_f_adapt > 0 || cfg.lambda_f_revert > 0;
  std::mt19937_64 rng(derive_seed(seed, {0xcfa7, static_cast<std::uint64_t>(pair_spec.agent_id + 1)}));
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  const int steps = cfg.cfa_steps();
  double recon = 0;
  for (int step = 0; step < steps; ++step) {
    std::vector<Grid> fi, fp;
    std::vector<const GroundTruth*> gi, gp;
    for (int k = 0; k < cfg.batch_k; ++k) {
      const auto [s, a] = items[pick(rng)];
      fi.push_back(F_i[s][a]);
      fp.push_back(F_P[s][a]);
      gi.push_back(&d.gt(local.spec.task, s, a));
      gp.push_back(&d.gt(protocol.spec.task, s, a));
    }
    p.zero_grad();
    const auto batch = run_pair(pair_spec, p, std::move(fi), std::move(fp));
    LossPairT<float> lf;
    if (use_f) lf = loss_feature(batch);
    const auto ld = loss_decision(head_P, head_i, batch, gp, gi, cfg.lambda_d_adapt == 0, cfg.lambda_d_revert == 0);
    const auto loss = total_loss(cfg, lf.adapt, lf.revert, ld.adapt, ld.revert);
    detail_train::check_finite(loss.item(), "train_cfa_pair", step);
    backward(loss);
    p.fill_missing_grads();
    adam_step(p, static_cast<float>(cfg.cfa_lr(step)));
    out.report.loss_curve.push_back(loss.item());
    for (std::size_t k = 0; k < batch.size(); ++k)
      recon += ops::l2_distance(batch.F_ii[k].detach(), batch.F_i[k]).item() / static_cast<double>(batch.size());
    if ((step + 1) % cfg.steps_per_epoch == 0) {
      out.report.reconstruction_curve.push_back(recon / cfg.steps_per_epoch);
      recon = 0;
    }
  }
  out.report.steps = steps;
  out.report.trainable_parameters = p.parameter_count();
  out.report.seconds = detail_train::elapsed(t0);
  return out;
}

}  // namespace cfa_lab

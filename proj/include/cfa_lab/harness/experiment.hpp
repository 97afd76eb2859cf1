#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cfa_lab/cfa.hpp"
#include "cfa_lab/pipeline.hpp"
#include "cfa_lab/util/parallel.hpp"

namespace cfa_lab {

inline AgentSpec make_agent(int id, Modality m, Task t, int channels, int resolution, int depth, Fusion f) {
  AgentSpec s;
  s.agent_id = id;
  s.modality = m;
  s.task = t;
  s.channels = channels;
  s.resolution = resolution;
  s.depth = depth;
  s.fusion = f;
  return s;
}

// Four heterogeneous agents: two detectors on different sensors and two
// lidar segmenters with different tasks.
inline std::vector<AgentSpec> default_roster() {
  return {make_agent(1, Modality::lidar_like, Task::detection, 32, 12, 4, Fusion::attention),
          make_agent(2, Modality::camera_like, Task::detection, 16, 24, 3, Fusion::max_gate),
          make_agent(3, Modality::lidar_like, Task::static_seg, 16, 24, 3, Fusion::max_gate),
          make_agent(4, Modality::lidar_like, Task::dynamic_seg, 16, 24, 3, Fusion::max_gate)};
}

enum class AblationAxis { channel_size, block_kind, loss_combo };

inline const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::channel_size: return "channel_size";
    case AblationAxis::block_kind: return "block_kind";
    default: return "loss_combo";
  }
}

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "channel_size") return AblationAxis::channel_size;
  if (s == "block_kind") return AblationAxis::block_kind;
  if (s == "loss_combo") return AblationAxis::loss_combo;
  throw ConfigError("unknown ablation axis '" + s + "' (expected channel_size, block_kind or loss_combo)");
}

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t n_train_scenes = 160;
  std::size_t n_eval_scenes = 64;
  WorldConfig world;
  SensorConfig sensor;
  std::vector<AgentSpec> roster = default_roster();
  ProtocolSpec protocol;
  CfaTrainConfig train;
  int pair_hidden = 16;
  int pair_blocks = 3;
  BlockKind block_kind = BlockKind::convnext_style;
  std::vector<double> sigmas = {0.0, 0.2, 0.4};  // in sensor-cell units
  double delta = 40.0;
  std::vector<Mode> modes = {Mode::non_collab, Mode::collab_no_cfa, Mode::stamp, Mode::late_fusion};
  double ap_iou = 0.5;
  std::vector<int> ablation_channels = {16, 8, 4};

  void validate() const {
    if (n_train_scenes == 0 || n_eval_scenes == 0) throw ConfigError("experiment: scene counts must be positive");
    if (roster.empty()) throw ConfigError("experiment: roster is empty");
    if (static_cast<int>(roster.size()) > world.n_agents)
      throw ConfigError("experiment: roster has " + std::to_string(roster.size()) + " agents but scenes place " +
                        std::to_string(world.n_agents));
    std::set<int> ids;
    for (const auto& a : roster) {
      a.validate();
      if (!ids.insert(a.agent_id).second) throw ConfigError("experiment: duplicate agent id " + std::to_string(a.agent_id));
    }
    protocol.agent_spec().validate();
    train.validate();
    if (pair_hidden <= 0 || pair_blocks < 0) throw ConfigError("experiment: pair sizes must be positive");
    for (double s : sigmas)
      if (!(s >= 0)) throw ConfigError("experiment: sigma values must be non-negative");
    if (!(delta >= 0)) throw ConfigError("experiment: delta must be non-negative");
    if (modes.empty()) throw ConfigError("experiment: no modes selected");
    if (!(ap_iou > 0 && ap_iou <= 1)) throw ConfigError("experiment: ap_iou must lie in (0, 1]");
  }

  double sigma_meters(double sigma_cells) const { return sigma_cells * sensor.cell_size(); }

  std::size_t roster_index(int agent_id) const {
    for (std::size_t k = 0; k < roster.size(); ++k)
      if (roster[k].agent_id == agent_id) return k;
    throw ConfigError("no agent with id " + std::to_string(agent_id) + " in the roster");
  }
};

struct Datasets {
  Dataset train, eval;
};

inline Datasets make_datasets(const ExperimentConfig& cfg) {
  std::set<Modality> mods{cfg.protocol.modality};
  std::set<Task> tasks{cfg.protocol.task};
  for (const auto& a : cfg.roster) {
    mods.insert(a.modality);
    tasks.insert(a.task);
  }
  return {make_dataset(cfg.seed, Split::train, cfg.n_train_scenes, mods, tasks, cfg.world, cfg.sensor),
          make_dataset(cfg.seed, Split::eval, cfg.n_eval_scenes, mods, tasks, cfg.world, cfg.sensor)};
}

inline PairSpec pair_spec_for(const ExperimentConfig& cfg, const AgentSpec& agent) {
  PairSpec p = PairSpec::between(agent, cfg.protocol);
  p.hidden = cfg.pair_hidden;
  p.n_blocks = cfg.pair_blocks;
  p.block_kind = cfg.block_kind;
  return p;
}

inline std::uint64_t protocol_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0x9a07}); }
inline std::uint64_t agent_seed(const ExperimentConfig& cfg, const AgentSpec& a) {
  return derive_seed(cfg.seed, {0xa6e7, static_cast<std::uint64_t>(a.agent_id)});
}
inline std::uint64_t pair_seed(const ExperimentConfig& cfg, const AgentSpec& a) {
  return derive_seed(cfg.seed, {0x9a12, static_cast<std::uint64_t>(a.agent_id)});
}

inline TrainedModel train_protocol_model(const ExperimentConfig& cfg, const Dataset& train) {
  return train_protocol(cfg.protocol, train, cfg.train, protocol_seed(cfg));
}

inline std::vector<TrainedModel> train_agents(const ExperimentConfig& cfg, const Dataset& train) {
  std::vector<std::optional<TrainedModel>> slots(cfg.roster.size());
  parallel_for(cfg.roster.size(), [&](std::size_t k) {
    slots[k] = train_agent_local(cfg.roster[k], train, cfg.train, agent_seed(cfg, cfg.roster[k]));
  });
  std::vector<TrainedModel> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<TrainedPair> train_pairs(const ExperimentConfig& cfg, const std::vector<TrainedModel>& agents,
                                            const TrainedModel& protocol, const Dataset& train) {
  const auto F_P = encode_all(protocol.model.spec, protocol.model.params, train);
  std::vector<std::optional<TrainedPair>> slots(agents.size());
  parallel_for(agents.size(), [&](std::size_t k) {
    const auto& spec = agents[k].model.spec;
    slots[k] = train_cfa_pair(agents[k].model, protocol.model, train, cfg.train, pair_seed(cfg, spec),
                              pair_spec_for(cfg, spec), &F_P);
  });
  std::vector<TrainedPair> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// Protocol model, local models and one pair per agent.
struct TrainedSystem {
  TrainedModel protocol;
  std::vector<TrainedModel> agents;
  std::vector<TrainedPair> pairs;
};

inline TrainedSystem train_system(const ExperimentConfig& cfg, const Dataset& train) {
  TrainedSystem s{train_protocol_model(cfg, train), train_agents(cfg, train), {}};
  s.pairs = train_pairs(cfg, s.agents, s.protocol, train);
  return s;
}

struct MetricRow {
  int agent_id = 0;
  Task task = Task::detection;
  std::string metric;  // "AP@0.5" or "mIoU"
  Mode mode = Mode::non_collab;
  double sigma = 0;  // cell units
  double value = 0;
  std::size_t scenes = 0;
  double delta_vs_non_collab = 0;
};

struct MetricsReport {
  std::uint64_t seed = 0;
  std::string label;
  std::vector<MetricRow> rows;

  const MetricRow* find(int agent_id, Mode mode, double sigma) const {
    for (const auto& r : rows)
      if (r.agent_id == agent_id && r.mode == mode && r.sigma == sigma) return &r;
    return nullptr;
  }

  double value(int agent_id, Mode mode, double sigma) const {
    const auto* r = find(agent_id, mode, sigma);
    if (!r)
      throw PreconditionError("report has no cell for agent " + std::to_string(agent_id) + ", mode " + to_string(mode) +
                              ", sigma " + std::to_string(sigma));
    return r->value;
  }
};

inline std::string metric_name(Task t, double ap_iou) {
  if (t != Task::detection) return "mIoU";
  char buf[32];
  std::snprintf(buf, sizeof buf, "AP@%g", ap_iou);
  return buf;
}

namespace detail_harness {

// Per-scene metric inputs for every (agent, mode, sigma) cell.
struct SceneOutcome {
  std::vector<std::vector<Box>> boxes;  // [cell]
  std::vector<SegCounts> seg;           // [cell]
};

}  // namespace detail_harness

// Evaluates every configured (mode, sigma) cell on the eval scenes. Pose
// noise uses common random numbers across sigma levels; non_collab never
// reads poses and is computed once per scene.
inline MetricsReport evaluate(const ExperimentConfig& cfg, const std::vector<AgentModel>& agents,
                              const std::vector<AdapterReverterPair>& pairs, const Dataset& eval,
                              const std::string& label = "main") {
  if (agents.size() != cfg.roster.size()) throw ConfigError("evaluate: one model per roster agent is required");
  std::vector<AgentModel> frozen_agents;
  for (const auto& a : agents) frozen_agents.push_back({a.spec, frozen(a.params)});
  std::vector<AdapterReverterPair> frozen_pairs;
  for (const auto& p : pairs) frozen_pairs.push_back({p.spec, frozen(p.params)});
  std::vector<const AgentModel*> mp;
  std::vector<const AdapterReverterPair*> pp;
  std::vector<Modality> mods;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    mp.push_back(&frozen_agents[k]);
    pp.push_back(k < frozen_pairs.size() ? &frozen_pairs[k] : nullptr);
    mods.push_back(agents[k].spec.modality);
  }
  const bool need_pairs = std::find(cfg.modes.begin(), cfg.modes.end(), Mode::stamp) != cfg.modes.end();
  if (need_pairs && frozen_pairs.size() != agents.size())
    throw ConfigError("evaluate: stamp mode needs one adapter/reverter pair per agent");

  // Cells: non_collab at index 0 (sigma-free), then (mode, sigma) pairs.
  struct Cell {
    Mode mode;
    double sigma;
  };
  std::vector<Cell> cells{{Mode::non_collab, 0.0}};
  for (Mode m : cfg.modes)
    if (m != Mode::non_collab)
      for (double s : cfg.sigmas) cells.push_back({m, s});

  const std::size_t n_agents = agents.size();
  const auto disk = visibility_disk(agents.empty() ? 48 : agents[0].spec.out_res, cfg.sensor);
  std::vector<detail_harness::SceneOutcome> per_scene(eval.size());
  parallel_for(eval.size(), [&](std::size_t s) {
    auto& so = per_scene[s];
    so.boxes.resize(cells.size() * n_agents);
    so.seg.resize(cells.size() * n_agents);
    std::vector<Grid> frames;
    for (std::size_t k = 0; k < n_agents; ++k) frames.push_back(eval.frame(mods[k], s, k));
    const std::uint64_t noise = derive_seed(cfg.seed, {0x5e, s});
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto round = make_round(eval.scenes[s], mods, cfg.delta, cfg.sigma_meters(cells[c].sigma), noise,
                                    eval.sensor, &frames);
      const auto out = run_round(round, mp, pp, cells[c].mode);
      for (std::size_t k = 0; k < n_agents; ++k) {
        const auto& gt = eval.gt(agents[k].spec.task, s, k);
        if (agents[k].spec.task == Task::detection)
          so.boxes[c * n_agents + k] = out[k].boxes;
        else
          so.seg[c * n_agents + k] = seg_counts(out[k].output.seg, gt.mask, 0.0, disk);
      }
    }
  });

  std::vector<double> values(cells.size() * n_agents);
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t k = 0; k < n_agents; ++k) {
      const std::size_t idx = c * n_agents + k;
      if (agents[k].spec.task == Task::detection) {
        std::vector<DetectionSample> samples;
        for (std::size_t s = 0; s < eval.size(); ++s)
          samples.push_back({per_scene[s].boxes[idx], eval.gt(Task::detection, s, k).boxes});
        values[idx] = average_precision(samples, cfg.ap_iou);
      } else {
        SegCounts total;
        for (std::size_t s = 0; s < eval.size(); ++s) total.add(per_scene[s].seg[idx]);
        values[idx] = total.miou();
      }
    }

  MetricsReport report;
  report.seed = cfg.seed;
  report.label = label;
  auto emit = [&](std::size_t c, Mode mode, double sigma) {
    for (std::size_t k = 0; k < n_agents; ++k) {
      MetricRow r;
      r.agent_id = agents[k].spec.agent_id;
      r.task = agents[k].spec.task;
      r.metric = metric_name(r.task, cfg.ap_iou);
      r.mode = mode;
      r.sigma = sigma;
      r.value = values[c * n_agents + k];
      r.scenes = eval.size();
      r.delta_vs_non_collab = r.value - values[k];
      report.rows.push_back(r);
    }
  };
  for (Mode m : cfg.modes) {
    if (m == Mode::non_collab) {
      for (double s : cfg.sigmas) emit(0, m, s);
      continue;
    }
    for (std::size_t c = 1; c < cells.size(); ++c)
      if (cells[c].mode == m) emit(c, m, cells[c].sigma);
  }
  return report;
}

inline std::vector<AgentModel> models_of(const std::vector<TrainedModel>& t) {
  std::vector<AgentModel> out;
  for (const auto& m : t) out.push_back(m.model);
  return out;
}

inline std::vector<AdapterReverterPair> pairs_of(const std::vector<TrainedPair>& t) {
  std::vector<AdapterReverterPair> out;
  for (const auto& p : t) out.push_back(p.pair);
  return out;
}

struct ExperimentResult {
  MetricsReport report;
  TrainedSystem system;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto data = make_datasets(cfg);
  auto system = train_system(cfg, data.train);
  auto report = evaluate(cfg, models_of(system.agents), pairs_of(system.pairs), data.eval);
  return {std::move(report), std::move(system)};
}

struct AblationLevel {
  std::string label;
  ExperimentConfig cfg;
};

inline std::vector<AblationLevel> ablation_levels(const ExperimentConfig& base, AblationAxis axis) {
  std::vector<AblationLevel> out;
  switch (axis) {
    case AblationAxis::channel_size:
      for (int c : base.ablation_channels) {
        auto cfg = base;
        cfg.protocol.channels = c;
        out.push_back({"channel_size=" + std::to_string(c), cfg});
      }
      break;
    case AblationAxis::block_kind:
      for (auto k : {BlockKind::convnext_style, BlockKind::conv1x1, BlockKind::self_attention}) {
        auto cfg = base;
        cfg.block_kind = k;
        out.push_back({std::string("block_kind=") + to_string(k), cfg});
      }
      break;
    case AblationAxis::loss_combo:
      for (const char* combo : {"f_only", "d_only", "both"}) {
        auto cfg = base;
        if (std::string(combo) == "f_only") cfg.train.lambda_d_adapt = cfg.train.lambda_d_revert = 0;
        if (std::string(combo) == "d_only") cfg.train.lambda_f_adapt = cfg.train.lambda_f_revert = 0;
        out.push_back({std::string("loss_combo=") + combo, cfg});
      }
      break;
  }
  for (auto& l : out) {
    l.cfg.modes = {Mode::stamp};
    l.cfg.sigmas = {0.0};
  }
  return out;
}

// Already-trained pieces an ablation may reuse: local models never depend
// on the protocol, the base protocol serves every level that keeps the
// protocol configuration, and the base pairs serve a level identical to the
// base in everything a pair depends on.
struct AblationReuse {
  const Datasets* data = nullptr;
  const std::vector<TrainedModel>* agents = nullptr;
  const TrainedModel* protocol = nullptr;
  const std::vector<TrainedPair>* pairs = nullptr;
};

inline bool same_pair_setup(const ExperimentConfig& a, const ExperimentConfig& b) {
  const auto& x = a.train;
  const auto& y = b.train;
  return a.protocol.channels == b.protocol.channels && a.block_kind == b.block_kind &&
         a.pair_hidden == b.pair_hidden && a.pair_blocks == b.pair_blocks &&
         x.lambda_f_adapt == y.lambda_f_adapt && x.lambda_f_revert == y.lambda_f_revert &&
         x.lambda_d_adapt == y.lambda_d_adapt && x.lambda_d_revert == y.lambda_d_revert;
}

// One stamp-mode report (sigma 0) per level of the axis, everything else
// held at the base configuration.
inline std::vector<MetricsReport> run_ablation(const ExperimentConfig& base, AblationAxis axis,
                                               const AblationReuse& reuse = {}) {
  base.validate();
  std::optional<Datasets> own_data;
  if (!reuse.data) own_data = make_datasets(base);
  const Datasets& data = reuse.data ? *reuse.data : *own_data;
  std::optional<std::vector<TrainedModel>> own_agents;
  if (!reuse.agents) own_agents = train_agents(base, data.train);
  const auto& agents = reuse.agents ? *reuse.agents : *own_agents;
  std::optional<TrainedModel> base_protocol;
  auto protocol_for = [&](const ExperimentConfig& cfg) -> TrainedModel {
    const bool same = cfg.protocol.channels == base.protocol.channels;
    if (same && reuse.protocol) return *reuse.protocol;
    if (same) {
      if (!base_protocol) base_protocol = train_protocol_model(base, data.train);
      return *base_protocol;
    }
    return train_protocol_model(cfg, data.train);
  };
  std::vector<MetricsReport> out;
  for (const auto& level : ablation_levels(base, axis)) {
    level.cfg.validate();
    std::vector<TrainedPair> pairs;
    if (reuse.pairs && same_pair_setup(level.cfg, base))
      pairs = *reuse.pairs;
    else
      pairs = train_pairs(level.cfg, agents, protocol_for(level.cfg), data.train);
    auto report = evaluate(level.cfg, models_of(agents), pairs_of(pairs), data.eval, level.label);
    out.push_back(std::move(report));
  }
  return out;
}

}  // namespace cfa_lab

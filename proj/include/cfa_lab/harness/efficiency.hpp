#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfa_lab/harness/experiment.hpp"

namespace cfa_lab {

enum class Framework { stamp, e2e, shared_core };

inline const char* to_string(Framework f) {
  switch (f) {
    case Framework::stamp: return "stamp";
    case Framework::e2e: return "e2e";
    default: return "shared_core";
  }
}

// Cost of growing the roster to n_agents under one framework.
//   setup_*      one-off work before the first agent joins (stamp: protocol
//                network; shared_core: the base network)
//   marginal_*   work done to admit agent n_agents
//   cumulative_* setup plus every marginal cost from 1 to n_agents
struct EfficiencyRow {
  Framework framework = Framework::stamp;
  int n_agents = 1;
  std::uint64_t setup_parameters = 0, setup_steps = 0;
  std::uint64_t marginal_parameters = 0, marginal_steps = 0;
  std::uint64_t cumulative_parameters = 0, cumulative_steps = 0;
};

struct EfficiencyReport {
  std::vector<EfficiencyRow> rows;
  std::uint64_t reference_encoder_parameters = 0;  // first roster agent
  // Paper-scale anchors, GPU hours per added agent. Reference only.
  double paper_stamp_gpu_hours = 2.36;
  double paper_e2e_gpu_hours = 17.07;

  const EfficiencyRow& at(Framework f, int n) const {
    for (const auto& r : rows)
      if (r.framework == f && r.n_agents == n) return r;
    throw PreconditionError(std::string("efficiency report has no row for ") + to_string(f) + " N=" + std::to_string(n));
  }
};

// Wall-clock seconds per training stage, measured on this machine. Kept
// apart from EfficiencyReport so that reports stay byte-reproducible.
struct MeasuredTimings {
  std::vector<std::pair<std::string, double>> stages;  // label, seconds
};

inline MeasuredTimings measured_timings(const TrainedSystem& s) {
  MeasuredTimings t;
  t.stages.emplace_back("protocol", s.protocol.report.seconds);
  for (const auto& a : s.agents)
    t.stages.emplace_back("agent" + std::to_string(a.model.spec.agent_id) + ".local", a.report.seconds);
  for (const auto& p : s.pairs)
    t.stages.emplace_back("agent" + std::to_string(p.pair.spec.agent_id) + ".pair", p.report.seconds);
  return t;
}

// Exact trainable-parameter and step counts for roster sizes 1..max_agents.
// Agent n uses roster[(n - 1) % roster.size()]. Step budgets follow the
// training config: a full model costs epochs_local epochs per agent trained
// jointly (so an e2e retrain of n agents costs epochs_local * n epochs), a
// pair costs epochs_cfa epochs.
inline EfficiencyReport efficiency_report(const ExperimentConfig& cfg, int max_agents) {
  if (max_agents < 1) throw PreconditionError("efficiency_report: need at least one agent");
  if (cfg.roster.empty()) throw ConfigError("efficiency_report: roster is empty");
  const std::uint64_t spe = static_cast<std::uint64_t>(cfg.train.steps_per_epoch);
  const std::uint64_t local_steps = static_cast<std::uint64_t>(cfg.train.local_steps());
  const std::uint64_t cfa_steps = static_cast<std::uint64_t>(cfg.train.cfa_steps());

  struct Counts {
    std::uint64_t model, encoder, pair;
  };
  std::map<int, Counts> by_agent;
  auto counts = [&](const AgentSpec& a) -> const Counts& {
    auto it = by_agent.find(a.agent_id);
    if (it != by_agent.end()) return it->second;
    const ParamStore p = build_agent_params(a, 0);
    const auto pair = build_pair(pair_spec_for(cfg, a), 0);
    return by_agent[a.agent_id] = {p.parameter_count(), p.parameter_count("encoder."), pair.parameter_count()};
  };
  auto agent = [&](int n) -> const AgentSpec& { return cfg.roster[static_cast<std::size_t>(n - 1) % cfg.roster.size()]; };
  const std::uint64_t protocol_params = build_agent_params(cfg.protocol.agent_spec(), 0).parameter_count();

  EfficiencyReport rep;
  rep.reference_encoder_parameters = counts(cfg.roster.front()).encoder;

  for (Framework f : {Framework::stamp, Framework::e2e, Framework::shared_core}) {
    std::uint64_t cum_params = 0, cum_steps = 0, roster_params = 0;
    EfficiencyRow base;
    base.framework = f;
    if (f == Framework::stamp) {
      base.setup_parameters = protocol_params;
      base.setup_steps = local_steps;
    } else if (f == Framework::shared_core) {
      base.setup_parameters = counts(agent(1)).model;
      base.setup_steps = local_steps;
    }
    cum_params = base.setup_parameters;
    cum_steps = base.setup_steps;
    for (int n = 1; n <= max_agents; ++n) {
      const auto& c = counts(agent(n));
      EfficiencyRow r = base;
      r.n_agents = n;
      switch (f) {
        case Framework::stamp:
          r.marginal_parameters = c.pair;
          r.marginal_steps = cfa_steps;
          break;
        case Framework::e2e:
          roster_params += c.model;
          r.marginal_parameters = roster_params;
          r.marginal_steps = static_cast<std::uint64_t>(cfg.train.epochs_local) * static_cast<std::uint64_t>(n) * spe;
          break;
        case Framework::shared_core:
          // The base agent is the setup; later agents align a new encoder
          // to the frozen shared fusion and head.
          r.marginal_parameters = n == 1 ? 0 : c.encoder;
          r.marginal_steps = n == 1 ? 0 : local_steps;
          break;
      }
      cum_params += r.marginal_parameters;
      cum_steps += r.marginal_steps;
      r.cumulative_parameters = cum_params;
      r.cumulative_steps = cum_steps;
      rep.rows.push_back(r);
    }
  }
  return rep;
}

}  // namespace cfa_lab

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cfa_lab/harness/experiment.hpp"
#include "cfa_lab/harness/report.hpp"

namespace cfa_lab::cli {

// Plain-text configuration:
//
//   # comment
//   [section]
//   key = value
//
// Sections are world, protocol, cfa, experiment and agents.<id>. Lists are
// comma separated. Unknown sections and keys are errors, as are repeated
// keys. Anything left unset keeps its ExperimentConfig default, except
// that an [agents.N] section must name modality, task, channels,
// resolution and fusion. Without any agent section the default roster is
// used.
namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Where {
  std::string origin;
  int line;
  std::string section, key;
  std::string str() const { return origin + ":" + std::to_string(line) + ": [" + section + "] " + key; }
};

inline double to_double(const std::string& v, const Where& w) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(d)) throw ConfigError(w.str() + ": expected a number, got '" + v + "'");
  return d;
}

inline long long to_int(const std::string& v, const Where& w) {
  std::size_t used = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(w.str() + ": expected an integer, got '" + v + "'");
  return i;
}

inline int to_count(const std::string& v, const Where& w) {
  const long long i = to_int(v, w);
  if (i < 0 || i > 1'000'000'000) throw ConfigError(w.str() + ": out of range");
  return static_cast<int>(i);
}

template <typename F>
auto wrap(F&& f, const std::string& v, const Where& w) {
  try {
    return f(v);
  } catch (const ConfigError& e) {
    throw ConfigError(w.str() + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_run_config(const std::string& text, const std::string& origin = "config") {
  using detail::Where;
  ExperimentConfig cfg;
  std::map<int, AgentSpec> agents;
  std::map<int, std::set<std::string>> agent_keys;
  std::set<std::string> seen;
  std::string section;
  int agent_id = 0;

  using Setter = std::function<void(const std::string&, const Where&)>;
  auto num = [](double& target) -> Setter { return [&target](const std::string& v, const Where& w) { target = detail::to_double(v, w); }; };
  auto cnt = [](int& target) -> Setter { return [&target](const std::string& v, const Where& w) { target = detail::to_count(v, w); }; };

  const std::map<std::string, Setter> world{
      {"extent", num(cfg.world.extent)},
      {"layout_res", cnt(cfg.world.layout_res)},
      {"n_objects", cnt(cfg.world.n_objects)},
      {"n_agents", cnt(cfg.world.n_agents)},
      {"road_width", num(cfg.world.road_width)},
      {"offroad_fraction", num(cfg.world.offroad_fraction)},
      {"max_retries", cnt(cfg.world.max_retries)},
      {"sensor_resolution", cnt(cfg.sensor.resolution)},
      {"visibility_radius", num(cfg.sensor.visibility_radius)},
      {"camera_max_blur", num(cfg.sensor.camera_max_blur)},
      {"camera_noise", num(cfg.sensor.camera_noise)},
  };
  const std::map<std::string, Setter> protocol{
      {"modality", [&](const std::string& v, const Where& w) { cfg.protocol.modality = detail::wrap(parse_modality, v, w); }},
      {"task", [&](const std::string& v, const Where& w) { cfg.protocol.task = detail::wrap(parse_task, v, w); }},
      {"channels", cnt(cfg.protocol.channels)},
      {"resolution", cnt(cfg.protocol.resolution)},
      {"depth", cnt(cfg.protocol.depth)},
      {"fusion", [&](const std::string& v, const Where& w) { cfg.protocol.fusion = detail::wrap(parse_fusion, v, w); }},
      {"head_width", cnt(cfg.protocol.head_width)},
  };
  const std::map<std::string, Setter> cfa{
      {"lambda_f_adapt", num(cfg.train.lambda_f_adapt)},
      {"lambda_f_revert", num(cfg.train.lambda_f_revert)},
      {"lambda_d_adapt", num(cfg.train.lambda_d_adapt)},
      {"lambda_d_revert", num(cfg.train.lambda_d_revert)},
      {"epochs_local", cnt(cfg.train.epochs_local)},
      {"epochs_cfa", cnt(cfg.train.epochs_cfa)},
      {"steps_per_epoch", cnt(cfg.train.steps_per_epoch)},
      {"batch_k", cnt(cfg.train.batch_k)},
      {"lr_local", num(cfg.train.lr_local)},
      {"lr_cfa", num(cfg.train.lr_cfa)},
      {"neighbor_drop", num(cfg.train.neighbor_drop)},
      {"train_delta", num(cfg.train.delta)},
      {"pair_hidden", cnt(cfg.pair_hidden)},
      {"pair_blocks", cnt(cfg.pair_blocks)},
      {"block_kind", [&](const std::string& v, const Where& w) { cfg.block_kind = detail::wrap(parse_block_kind, v, w); }},
  };
  const std::map<std::string, Setter> experiment{
      {"seed",
       [&](const std::string& v, const Where& w) {
         const long long s = detail::to_int(v, w);
         if (s < 0) throw ConfigError(w.str() + ": seed must be non-negative");
         cfg.seed = static_cast<std::uint64_t>(s);
       }},
      {"n_train_scenes", [&](const std::string& v, const Where& w) { cfg.n_train_scenes = detail::to_count(v, w); }},
      {"n_eval_scenes", [&](const std::string& v, const Where& w) { cfg.n_eval_scenes = detail::to_count(v, w); }},
      {"sigmas",
       [&](const std::string& v, const Where& w) {
         cfg.sigmas.clear();
         for (const auto& s : detail::split_list(v)) cfg.sigmas.push_back(detail::to_double(s, w));
       }},
      {"delta", num(cfg.delta)},
      {"modes",
       [&](const std::string& v, const Where& w) {
         cfg.modes.clear();
         for (const auto& s : detail::split_list(v)) cfg.modes.push_back(detail::wrap(parse_mode, s, w));
       }},
      {"ap_iou", num(cfg.ap_iou)},
      {"ablation_channels",
       [&](const std::string& v, const Where& w) {
         cfg.ablation_channels.clear();
         for (const auto& s : detail::split_list(v)) cfg.ablation_channels.push_back(detail::to_count(s, w));
       }},
  };
  auto agent_setter = [&](const std::string& key) -> std::optional<Setter> {
    auto& a = agents[agent_id];
    if (key == "modality") return [&a](const std::string& v, const Where& w) { a.modality = detail::wrap(parse_modality, v, w); };
    if (key == "task") return [&a](const std::string& v, const Where& w) { a.task = detail::wrap(parse_task, v, w); };
    if (key == "channels") return cnt(a.channels);
    if (key == "resolution") return cnt(a.resolution);
    if (key == "depth") return cnt(a.depth);
    if (key == "fusion") return [&a](const std::string& v, const Where& w) { a.fusion = detail::wrap(parse_fusion, v, w); };
    if (key == "head_width") return cnt(a.head_width);
    if (key == "stage_widths")
      return [&a](const std::string& v, const Where& w) {
        a.stage_widths.clear();
        for (const auto& s : detail::split_list(v)) a.stage_widths.push_back(detail::to_count(s, w));
      };
    return std::nullopt;
  };

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.rfind("agents.", 0) == 0) {
        const Where w{origin, lineno, section, "id"};
        const long long id = detail::to_int(section.substr(7), w);
        if (id < 0 || id > 1'000'000) throw ConfigError(w.str() + ": agent id out of range");
        agent_id = static_cast<int>(id);
        if (agents.count(agent_id)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate section [" + section + "]");
        agents[agent_id].agent_id = agent_id;
        agent_keys[agent_id];
      } else if (section != "world" && section != "protocol" && section != "cfa" && section != "experiment") {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const Where w{origin, lineno, section, key};
    if (section.empty()) throw ConfigError(w.str() + ": key outside any section");
    if (!seen.insert(section + "." + key).second) throw ConfigError(w.str() + ": repeated key");
    if (value.empty()) throw ConfigError(w.str() + ": empty value");
    if (section.rfind("agents.", 0) == 0) {
      const auto setter = agent_setter(key);
      if (!setter) throw ConfigError(w.str() + ": unknown key");
      (*setter)(value, w);
      agent_keys[agent_id].insert(key);
      continue;
    }
    const auto& table = section == "world" ? world : section == "protocol" ? protocol : section == "cfa" ? cfa : experiment;
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(w.str() + ": unknown key");
    it->second(value, w);
  }

  if (!agents.empty()) {
    cfg.roster.clear();
    for (auto& [id, a] : agents) {
      for (const char* req : {"modality", "task", "channels", "resolution", "fusion"})
        if (!agent_keys[id].count(req))
          throw ConfigError(origin + ": [agents." + std::to_string(id) + "] must set '" + req + "'");
      if (!agent_keys[id].count("depth")) a.depth = static_cast<int>(a.widths().size());
      cfg.roster.push_back(a);
    }
  }
  for (auto& a : cfg.roster) a.sensor_res = a.out_res = cfg.sensor.resolution;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path), path.string());
}

}  // namespace cfa_lab::cli

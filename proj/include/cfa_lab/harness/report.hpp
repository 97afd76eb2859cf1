#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfa_lab/harness/efficiency.hpp"
#include "cfa_lab/harness/experiment.hpp"
#include "cfa_lab/pipeline/checkpoint.hpp"

namespace cfa_lab {

enum class ReportFormat { json_like_text, csv, ascii_plot };

inline const char* to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::json_like_text: return "json_like_text";
    case ReportFormat::csv: return "csv";
    default: return "ascii_plot";
  }
}

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json_like_text" || s == "json") return ReportFormat::json_like_text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "ascii_plot" || s == "ascii") return ReportFormat::ascii_plot;
  throw ConfigError("unknown report format '" + s + "' (expected json_like_text, csv or ascii_plot)");
}

inline constexpr const char* kSigmaUnitNote =
    "sigma is the standard deviation of Gaussian noise added to the x and y of every received pose, in "
    "sensor-cell units (1 cell = 1 m)";
inline constexpr const char* kCollabBridgeNote =
    "collab_no_cfa bridges mismatched shapes by bilinear spatial resize and zero-padding or truncating channels";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- metrics ------------------------------------------------------------

inline nlohmann::ordered_json metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["seed"] = r.seed;
  j["sigma_unit"] = kSigmaUnitNote;
  j["collab_no_cfa_bridge"] = kCollabBridgeNote;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json e;
    e["agent_id"] = row.agent_id;
    e["task"] = to_string(row.task);
    e["metric"] = row.metric;
    e["mode"] = to_string(row.mode);
    e["sigma"] = row.sigma;
    e["value"] = row.value;
    e["scenes"] = row.scenes;
    e["delta_vs_non_collab"] = row.delta_vs_non_collab;
    j["rows"].push_back(std::move(e));
  }
  return j;
}

inline constexpr const char* kMetricsCsvHeader = "label,agent_id,task,metric,mode,sigma,value,scenes,delta_vs_non_collab";

inline std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << kMetricsCsvHeader << '\n';
  for (const auto& row : r.rows)
    os << r.label << ',' << row.agent_id << ',' << to_string(row.task) << ',' << row.metric << ','
       << to_string(row.mode) << ',' << format_double(row.sigma) << ',' << format_double(row.value) << ','
       << row.scenes << ',' << format_double(row.delta_vs_non_collab) << '\n';
  return os.str();
}

inline MetricsReport parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsCsvHeader) throw LoadError("metrics csv: missing or wrong header");
  MetricsReport r;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw LoadError("metrics csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    try {
      r.label = f[0];
      MetricRow row;
      row.agent_id = std::stoi(f[1]);
      row.task = parse_task(f[2]);
      row.metric = f[3];
      row.mode = parse_mode(f[4]);
      row.sigma = std::stod(f[5]);
      row.value = std::stod(f[6]);
      row.scenes = std::stoul(f[7]);
      row.delta_vs_non_collab = std::stod(f[8]);
      r.rows.push_back(row);
    } catch (const std::logic_error&) {
      throw LoadError("metrics csv: unparsable value on line " + std::to_string(lineno));
    }
  }
  return r;
}

namespace detail_report {

// Renders named series of (x, y) points, y in [0, 1], on a character grid.
inline std::string plot(const std::string& title, const std::string& x_label,
                        const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series,
                        int width = 48, int height = 12) {
  static const char marks[] = "*o+x#@%&=~";
  std::ostringstream os;
  os << title << '\n';
  double x0 = 0, x1 = 0;
  bool any = false;
  for (const auto& [_, pts] : series)
    for (const auto& [x, y] : pts) {
      x0 = any ? std::min(x0, x) : x;
      x1 = any ? std::max(x1, x) : x;
      any = true;
    }
  if (!any) {
    os << "  (no data)\n";
    return os.str();
  }
  std::vector<std::string> canvas(static_cast<std::size_t>(height) + 1, std::string(static_cast<std::size_t>(width) + 1, ' '));
  for (std::size_t s = 0; s < series.size(); ++s)
    for (const auto& [x, y] : series[s].second) {
      const int cx = x1 > x0 ? static_cast<int>(std::lround((x - x0) / (x1 - x0) * width)) : width / 2;
      const int cy = static_cast<int>(std::lround(std::clamp(y, 0.0, 1.0) * height));
      canvas[static_cast<std::size_t>(height - cy)][static_cast<std::size_t>(cx)] = marks[s % (sizeof marks - 1)];
    }
  for (int r = 0; r <= height; ++r) {
    char axis[16];
    std::snprintf(axis, sizeof axis, "%5.2f |", 1.0 - static_cast<double>(r) / height);
    os << axis << canvas[static_cast<std::size_t>(r)] << '\n';
  }
  os << "      +" << std::string(static_cast<std::size_t>(width) + 1, '-') << '\n';
  char lo[32], hi[32];
  std::snprintf(lo, sizeof lo, "%g", x0);
  std::snprintf(hi, sizeof hi, "%g", x1);
  std::string ticks = std::string("       ") + lo;
  const std::size_t right = 7 + static_cast<std::size_t>(width) + 1;
  if (ticks.size() + std::strlen(hi) < right) ticks += std::string(right - ticks.size() - std::strlen(hi), ' ');
  os << ticks << hi << "   " << x_label << '\n';
  for (std::size_t s = 0; s < series.size(); ++s) os << "  " << marks[s % (sizeof marks - 1)] << ' ' << series[s].first << '\n';
  return os.str();
}

}  // namespace detail_report

// Metric against sigma, one series per (agent, mode).
inline std::string ascii_plot_sigma(const MetricsReport& r) {
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
  for (const auto& row : r.rows) {
    const std::string name = "agent" + std::to_string(row.agent_id) + " " + to_string(row.mode) + " (" + row.metric + ")";
    auto it = std::find_if(series.begin(), series.end(), [&](const auto& s) { return s.first == name; });
    if (it == series.end()) {
      series.push_back({name, {}});
      it = std::prev(series.end());
    }
    it->second.emplace_back(row.sigma, row.value);
  }
  return detail_report::plot("metric vs sigma [" + r.label + "]", "sigma (cells)", series);
}

// Metric against protocol channel count for a channel_size ablation: one
// series per agent, taken from each level's stamp row at the lowest sigma.
inline std::string ascii_plot_channels(const std::vector<MetricsReport>& levels) {
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
  for (const auto& rep : levels) {
    const auto eq = rep.label.find('=');
    if (eq == std::string::npos) continue;
    const double channels = std::stod(rep.label.substr(eq + 1));
    for (const auto& row : rep.rows) {
      if (row.mode != Mode::stamp) continue;
      const std::string name = "agent" + std::to_string(row.agent_id) + " (" + row.metric + ")";
      auto it = std::find_if(series.begin(), series.end(), [&](const auto& s) { return s.first == name; });
      if (it == series.end()) {
        series.push_back({name, {}});
        it = std::prev(series.end());
      }
      it->second.emplace_back(channels, row.value);
    }
  }
  return detail_report::plot("stamp metric vs protocol channels", "channels", series);
}

// ---- efficiency ---------------------------------------------------------

inline nlohmann::ordered_json efficiency_json(const EfficiencyReport& e) {
  nlohmann::ordered_json j;
  j["reference_encoder_parameters"] = e.reference_encoder_parameters;
  j["paper_reference_gpu_hours_per_agent"] = {{"stamp", e.paper_stamp_gpu_hours}, {"e2e", e.paper_e2e_gpu_hours}};
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : e.rows)
    j["rows"].push_back({{"framework", to_string(r.framework)},
                         {"n_agents", r.n_agents},
                         {"setup_parameters", r.setup_parameters},
                         {"setup_steps", r.setup_steps},
                         {"marginal_parameters", r.marginal_parameters},
                         {"marginal_steps", r.marginal_steps},
                         {"cumulative_parameters", r.cumulative_parameters},
                         {"cumulative_steps", r.cumulative_steps}});
  return j;
}

inline std::string efficiency_csv(const EfficiencyReport& e) {
  std::ostringstream os;
  os << "framework,n_agents,setup_parameters,setup_steps,marginal_parameters,marginal_steps,cumulative_parameters,"
        "cumulative_steps\n";
  for (const auto& r : e.rows)
    os << to_string(r.framework) << ',' << r.n_agents << ',' << r.setup_parameters << ',' << r.setup_steps << ','
       << r.marginal_parameters << ',' << r.marginal_steps << ',' << r.cumulative_parameters << ','
       << r.cumulative_steps << '\n';
  return os.str();
}

inline std::string timings_csv(const MeasuredTimings& t) {
  std::ostringstream os;
  os << "stage,seconds\n";
  for (const auto& [name, s] : t.stages) os << name << ',' << format_double(s) << '\n';
  return os.str();
}

// ---- files --------------------------------------------------------------

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string read_text(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// Writes <stem>.json, <stem>.csv or <stem>.txt into dir and returns the path.
inline std::filesystem::path render_report(const MetricsReport& r, ReportFormat f, const std::filesystem::path& dir,
                                           const std::string& stem = "metrics") {
  ensure_dir(dir);
  switch (f) {
    case ReportFormat::json_like_text: {
      const auto p = dir / (stem + ".json");
      write_text(p, metrics_json(r).dump(2) + "\n");
      return p;
    }
    case ReportFormat::csv: {
      const auto p = dir / (stem + ".csv");
      write_text(p, metrics_csv(r));
      return p;
    }
    default: {
      const auto p = dir / (stem + ".txt");
      write_text(p, ascii_plot_sigma(r));
      return p;
    }
  }
}

// Per-channel mean of a [1,C,H,W] grid as an 8-bit binary PGM. Values are
// scaled by the largest mean (negative means clamp to black), so an all-zero
// grid renders uniformly black.
inline std::vector<std::uint8_t> feature_pgm(const Grid& g) {
  if (g.rank() != 4 || g.dim(0) != 1) throw DimensionError("feature_pgm: expected [1,C,H,W], got " + shape_str(g.shape()));
  const int C = g.dim(1), H = g.dim(2), W = g.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> mean(plane, 0.0);
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) mean[i] += g[c * plane + i];
  double hi = 0;
  for (auto& m : mean) hi = std::max(hi, m /= C);
  const std::string header = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double m : mean) out.push_back(hi > 0 ? static_cast<std::uint8_t>(std::lround(std::clamp(m / hi, 0.0, 1.0) * 255)) : 0);
  return out;
}

inline void write_feature_pgm(const std::filesystem::path& path, const Grid& g) { write_file(path, feature_pgm(g)); }

// ---- manifest -----------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Canonical text of every setting that influences results.
inline std::string config_fingerprint(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["n_train_scenes"] = c.n_train_scenes;
  j["n_eval_scenes"] = c.n_eval_scenes;
  j["world"] = {{"extent", c.world.extent},         {"layout_res", c.world.layout_res},
                {"n_objects", c.world.n_objects},   {"n_agents", c.world.n_agents},
                {"road_width", c.world.road_width}, {"offroad_fraction", c.world.offroad_fraction},
                {"max_retries", c.world.max_retries}};
  j["sensor"] = {{"resolution", c.sensor.resolution},
                 {"visibility_radius", c.sensor.visibility_radius},
                 {"camera_max_blur", c.sensor.camera_max_blur},
                 {"camera_noise", c.sensor.camera_noise}};
  j["roster"] = nlohmann::ordered_json::array();
  for (const auto& a : c.roster)
    j["roster"].push_back({{"id", a.agent_id},
                           {"modality", to_string(a.modality)},
                           {"task", to_string(a.task)},
                           {"channels", a.channels},
                           {"resolution", a.resolution},
                           {"depth", a.depth},
                           {"stage_widths", a.stage_widths},
                           {"fusion", to_string(a.fusion)},
                           {"head_width", a.head_width},
                           {"out_res", a.out_res}});
  j["protocol"] = {{"modality", to_string(c.protocol.modality)}, {"task", to_string(c.protocol.task)},
                   {"channels", c.protocol.channels},             {"resolution", c.protocol.resolution},
                   {"depth", c.protocol.depth},                   {"fusion", to_string(c.protocol.fusion)},
                   {"head_width", c.protocol.head_width}};
  const auto& t = c.train;
  j["cfa"] = {{"lambda", {t.lambda_f_adapt, t.lambda_f_revert, t.lambda_d_adapt, t.lambda_d_revert}},
              {"epochs_local", t.epochs_local},
              {"epochs_cfa", t.epochs_cfa},
              {"steps_per_epoch", t.steps_per_epoch},
              {"batch_k", t.batch_k},
              {"lr_local", t.lr_local},
              {"lr_cfa", t.lr_cfa},
              {"neighbor_drop", t.neighbor_drop},
              {"delta", t.delta},
              {"pair_hidden", c.pair_hidden},
              {"pair_blocks", c.pair_blocks},
              {"block_kind", to_string(c.block_kind)}};
  j["experiment"] = {{"sigmas", c.sigmas}, {"delta", c.delta}, {"ap_iou", c.ap_iou}, {"ablation_channels", c.ablation_channels}};
  std::vector<std::string> modes;
  for (Mode m : c.modes) modes.push_back(to_string(m));
  j["experiment"]["modes"] = modes;
  return j.dump();
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(config_fingerprint(c))); }

inline nlohmann::ordered_json manifest_json(const ExperimentConfig& c, const std::string& command,
                                            const std::vector<std::string>& artifacts) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["train_scene_seed_split"] = static_cast<int>(Split::train);
  j["eval_scene_seed_split"] = static_cast<int>(Split::eval);
  j["artifacts"] = artifacts;
  return j;
}

}  // namespace cfa_lab

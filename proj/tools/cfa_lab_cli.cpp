// cfa-lab: staged front end over the cfa_lab library.
//
// Artifact layout under --out:
//   data/manifest.json, data/{train,eval}/NNNN.scene
//   checkpoints/{protocol,agent<id>,pair<id>}.cfck
//   reports/...            deterministic reports
//   timings/<stage>.csv    measured wall-clock (not reproducible)
//   manifests/<command>.json

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cfa_lab/cfa.hpp"
#include "cfa_lab/cli/config.hpp"
#include "cfa_lab/harness.hpp"
#include "cfa_lab/pipeline.hpp"
#include "cfa_lab/world/scene_io.hpp"

namespace fs = std::filesystem;
using namespace cfa_lab;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "cfa-lab-out";
  std::optional<std::string> mode;
  std::optional<double> sigma;
  int agent_id = 0;
  std::string axis;
};

struct Layout {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path reports() const { return root / "reports"; }
  fs::path timings() const { return root / "timings"; }
  fs::path manifests() const { return root / "manifests"; }
  fs::path protocol() const { return checkpoints() / "protocol.cfck"; }
  fs::path agent(int id) const { return checkpoints() / ("agent" + std::to_string(id) + ".cfck"); }
  fs::path pair(int id) const { return checkpoints() / ("pair" + std::to_string(id) + ".cfck"); }
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : cli::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

// Identity of the generated scenes: everything make_datasets reads.
std::string data_hash(const ExperimentConfig& c) {
  ExperimentConfig d;
  d.seed = c.seed;
  d.n_train_scenes = c.n_train_scenes;
  d.n_eval_scenes = c.n_eval_scenes;
  d.world = c.world;
  d.sensor = c.sensor;
  return config_hash(d);
}

void write_manifest(const Layout& L, const ExperimentConfig& cfg, const std::string& command,
                    const std::vector<fs::path>& artifacts) {
  std::vector<std::string> rel;
  for (const auto& a : artifacts) rel.push_back(fs::relative(a, L.root).generic_string());
  ensure_dir(L.manifests());
  std::string name = command;
  for (auto& ch : name)
    if (ch == ' ') ch = '_';
  write_text(L.manifests() / (name + ".json"), manifest_json(cfg, command, rel).dump(2) + "\n");
}

void write_timing(const Layout& L, const std::string& stage, double seconds) {
  ensure_dir(L.timings());
  MeasuredTimings t;
  t.stages.emplace_back(stage, seconds);
  write_text(L.timings() / (stage + ".csv"), timings_csv(t));
}

void require_data(const Layout& L, const ExperimentConfig& cfg) {
  const auto m = L.data() / "manifest.json";
  if (!fs::exists(m)) throw DependencyError("no generated data in " + L.data().string() + "; run gen-data first");
  const auto j = nlohmann::json::parse(read_text(m), nullptr, false);
  if (j.is_discarded() || !j.contains("data_hash") || j["data_hash"] != data_hash(cfg))
    throw DependencyError("generated data does not match this config; rerun gen-data");
}

// A checkpoint must carry exactly the parameter names and shapes the
// config implies.
void check_layout(const ParamStore& got, const ParamStore& want, const fs::path& path, const std::string& rerun) {
  bool ok = got.size() == want.size();
  for (const auto& [name, g] : want.entries()) {
    if (!ok) break;
    ok = got.contains(name) && got.get(name).shape() == g.shape();
  }
  if (!ok) throw DependencyError(path.string() + " does not match this config; rerun " + rerun);
}

ParamStore load_required(const fs::path& path, const std::string& command) {
  if (!fs::exists(path)) throw DependencyError("missing " + path.string() + "; run " + command + " first");
  return load_checkpoint(path);
}

AgentModel load_agent(const Layout& L, const AgentSpec& spec) {
  const std::string cmd = "train-agent " + std::to_string(spec.agent_id);
  auto p = load_required(L.agent(spec.agent_id), cmd);
  check_layout(p, build_agent_params(spec, 0), L.agent(spec.agent_id), cmd);
  return {spec, std::move(p)};
}

AgentModel load_protocol(const Layout& L, const ExperimentConfig& cfg) {
  auto p = load_required(L.protocol(), "train-protocol");
  check_layout(p, build_agent_params(cfg.protocol.agent_spec(), 0), L.protocol(), "train-protocol");
  return {cfg.protocol.agent_spec(), std::move(p)};
}

AdapterReverterPair load_pair(const Layout& L, const ExperimentConfig& cfg, const AgentSpec& spec) {
  const std::string cmd = "train-cfa " + std::to_string(spec.agent_id);
  auto p = load_required(L.pair(spec.agent_id), cmd);
  const auto ps = pair_spec_for(cfg, spec);
  check_layout(p, build_pair(ps, 0).params, L.pair(spec.agent_id), cmd);
  return {ps, std::move(p)};
}

TrainedModel as_trained(AgentModel m) { return {std::move(m), {}}; }

// ---- commands -----------------------------------------------------------

void cmd_gen_data(const Layout& L, const ExperimentConfig& cfg) {
  const auto data = make_datasets(cfg);
  std::vector<fs::path> written;
  for (const auto& [name, d] : {std::pair<const char*, const Dataset*>{"train", &data.train}, {"eval", &data.eval}}) {
    const auto dir = L.data() / name;
    ensure_dir(dir);
    for (std::size_t s = 0; s < d->size(); ++s) {
      char file[32];
      std::snprintf(file, sizeof file, "%04zu.scene", s);
      write_text(dir / file, dump_scene(d->scenes[s]));
      written.push_back(dir / file);
    }
  }
  nlohmann::ordered_json m;
  m["data_hash"] = data_hash(cfg);
  m["seed"] = cfg.seed;
  m["train_scenes"] = cfg.n_train_scenes;
  m["eval_scenes"] = cfg.n_eval_scenes;
  write_text(L.data() / "manifest.json", m.dump(2) + "\n");
  written.push_back(L.data() / "manifest.json");
  write_manifest(L, cfg, "gen-data", written);
  std::cout << "generated " << cfg.n_train_scenes << " train and " << cfg.n_eval_scenes << " eval scenes in "
            << L.data().string() << "\n";
}

void cmd_train_protocol(const Layout& L, const ExperimentConfig& cfg) {
  require_data(L, cfg);
  const auto data = make_datasets(cfg);
  const auto t = train_protocol_model(cfg, data.train);
  ensure_dir(L.checkpoints());
  save_checkpoint(t.model.params, L.protocol());
  write_timing(L, "protocol", t.report.seconds);
  write_manifest(L, cfg, "train-protocol", {L.protocol()});
  std::cout << "protocol: " << t.report.steps << " steps, final loss " << t.report.loss_curve.back() << ", "
            << t.report.trainable_parameters << " parameters -> " << L.protocol().string() << "\n";
}

void cmd_train_agent(const Layout& L, const ExperimentConfig& cfg, int id) {
  const auto& spec = cfg.roster[cfg.roster_index(id)];
  require_data(L, cfg);
  const auto data = make_datasets(cfg);
  const auto t = train_agent_local(spec, data.train, cfg.train, agent_seed(cfg, spec));
  ensure_dir(L.checkpoints());
  save_checkpoint(t.model.params, L.agent(id));
  write_timing(L, "agent" + std::to_string(id), t.report.seconds);
  write_manifest(L, cfg, "train-agent " + std::to_string(id), {L.agent(id)});
  std::cout << "agent " << id << ": " << t.report.steps << " steps, final loss " << t.report.loss_curve.back() << " -> "
            << L.agent(id).string() << "\n";
}

void cmd_train_cfa(const Layout& L, const ExperimentConfig& cfg, int id) {
  const auto& spec = cfg.roster[cfg.roster_index(id)];
  const auto protocol = load_protocol(L, cfg);
  const auto local = load_agent(L, spec);
  require_data(L, cfg);
  const auto data = make_datasets(cfg);
  const auto t = train_cfa_pair(local, protocol, data.train, cfg.train, pair_seed(cfg, spec), pair_spec_for(cfg, spec));
  save_checkpoint(t.pair.params, L.pair(id));
  write_timing(L, "pair" + std::to_string(id), t.report.seconds);
  write_manifest(L, cfg, "train-cfa " + std::to_string(id), {L.pair(id)});
  std::cout << "pair " << id << ": " << t.report.steps << " steps, final loss " << t.report.loss_curve.back() << ", "
            << t.pair.parameter_count() << " parameters -> " << L.pair(id).string() << "\n";
}

void dump_feature_maps(const Layout& L, const ExperimentConfig& cfg, const Dataset& eval,
                       const std::vector<AgentModel>& agents, const std::vector<AdapterReverterPair>& pairs,
                       std::vector<fs::path>& written) {
  const auto dir = L.reports() / "features";
  ensure_dir(dir);
  std::vector<AgentModel> fa;
  std::vector<AdapterReverterPair> fp;
  for (const auto& a : agents) fa.push_back({a.spec, frozen(a.params)});
  for (const auto& p : pairs) fp.push_back({p.spec, frozen(p.params)});
  std::vector<const AgentModel*> mp;
  std::vector<const AdapterReverterPair*> pp;
  std::vector<Modality> mods;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    mp.push_back(&fa[k]);
    pp.push_back(k < fp.size() ? &fp[k] : nullptr);
    mods.push_back(agents[k].spec.modality);
  }
  const auto round = make_round(eval.scenes[0], mods, cfg.delta, cfg.sigma_meters(cfg.sigmas.front()),
                                derive_seed(cfg.seed, {0x5e, 0}), eval.sensor);
  for (Mode m : cfg.modes) {
    const auto out = run_round(round, mp, pp, m);
    for (std::size_t k = 0; k < agents.size(); ++k) {
      const auto path = dir / ("scene0_agent" + std::to_string(agents[k].spec.agent_id) + "_" + to_string(m) + ".pgm");
      write_feature_pgm(path, out[k].fused);
      written.push_back(path);
    }
  }
}

void cmd_eval(const Layout& L, ExperimentConfig cfg, const Options& o) {
  if (o.mode) cfg.modes = {parse_mode(*o.mode)};
  if (o.sigma) cfg.sigmas = {*o.sigma};
  cfg.validate();
  std::vector<AgentModel> agents;
  for (const auto& spec : cfg.roster) agents.push_back(load_agent(L, spec));
  std::vector<AdapterReverterPair> pairs;
  if (std::find(cfg.modes.begin(), cfg.modes.end(), Mode::stamp) != cfg.modes.end())
    for (const auto& spec : cfg.roster) pairs.push_back(load_pair(L, cfg, spec));
  require_data(L, cfg);
  const auto data = make_datasets(cfg);
  const auto report = evaluate(cfg, agents, pairs, data.eval);
  std::vector<fs::path> written;
  for (auto f : {ReportFormat::json_like_text, ReportFormat::csv, ReportFormat::ascii_plot})
    written.push_back(render_report(report, f, L.reports()));
  dump_feature_maps(L, cfg, data.eval, agents, pairs, written);
  write_manifest(L, cfg, "eval", written);
  std::cout << metrics_csv(report);
}

void cmd_ablate(const Layout& L, const ExperimentConfig& cfg, const std::string& axis_name) {
  const AblationAxis axis = parse_axis(axis_name);
  std::vector<TrainedModel> agents;
  for (const auto& spec : cfg.roster) agents.push_back(as_trained(load_agent(L, spec)));
  const TrainedModel protocol = as_trained(load_protocol(L, cfg));
  require_data(L, cfg);
  const auto data = make_datasets(cfg);
  // Trained base pairs, when present, stand in for the level equal to the base.
  std::optional<std::vector<TrainedPair>> pairs;
  if (std::all_of(cfg.roster.begin(), cfg.roster.end(), [&](const auto& s) { return fs::exists(L.pair(s.agent_id)); })) {
    pairs.emplace();
    for (const auto& spec : cfg.roster) pairs->push_back({load_pair(L, cfg, spec), {}});
  }
  const auto reports = run_ablation(cfg, axis, {&data, &agents, &protocol, pairs ? &*pairs : nullptr});
  const auto dir = L.reports() / ("ablation_" + axis_name);
  std::vector<fs::path> written;
  for (const auto& r : reports) {
    std::string stem = r.label;
    for (auto& ch : stem)
      if (ch == '=') ch = '_';
    written.push_back(render_report(r, ReportFormat::json_like_text, dir, stem));
    written.push_back(render_report(r, ReportFormat::csv, dir, stem));
    std::cout << metrics_csv(r);
  }
  if (axis == AblationAxis::channel_size) {
    write_text(dir / "plot_channels.txt", ascii_plot_channels(reports));
    written.push_back(dir / "plot_channels.txt");
  }
  write_manifest(L, cfg, "ablate " + axis_name, written);
}

void cmd_report(const Layout& L, const ExperimentConfig& cfg) {
  const auto csv = L.reports() / "metrics.csv";
  if (!fs::exists(csv)) throw DependencyError("missing " + csv.string() + "; run eval first");
  const auto metrics = parse_metrics_csv(read_text(csv));
  std::vector<fs::path> written;
  write_text(L.reports() / "plot_sigma.txt", ascii_plot_sigma(metrics));
  written.push_back(L.reports() / "plot_sigma.txt");
  const auto eff = efficiency_report(cfg, static_cast<int>(std::max<std::size_t>(cfg.roster.size(), 8)));
  write_text(L.reports() / "efficiency.json", efficiency_json(eff).dump(2) + "\n");
  write_text(L.reports() / "efficiency.csv", efficiency_csv(eff));
  written.push_back(L.reports() / "efficiency.json");
  written.push_back(L.reports() / "efficiency.csv");

  // Measured timings are gathered from whatever training stages ran.
  if (fs::is_directory(L.timings())) {
    MeasuredTimings all;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(L.timings()))
      if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::istringstream is(read_text(f));
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        const auto comma = line.find(',');
        if (comma != std::string::npos) all.stages.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
      }
    }
    write_text(L.timings() / "summary.txt", timings_csv(all));
  }
  write_manifest(L, cfg, "report", written);
  std::cout << ascii_plot_sigma(metrics) << efficiency_csv(eff);
}

int exit_code(const Error& e) {
  if (e.category() == "config") return 2;
  if (e.category() == "dependency") return 3;
  if (e.category() == "io" || e.category() == "load") return 4;
  return 1;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cfa-lab: heterogeneous collaborative perception with a shared protocol domain"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "Run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Override the configured seed");
  app.add_option("--out", o.out, "Artifact directory");
  app.add_option("--mode", o.mode, "eval: evaluate a single mode");
  app.add_option("--sigma", o.sigma, "eval: evaluate a single pose-noise level (cell units)");

  auto* gen = app.add_subcommand("gen-data", "Generate train and eval scenes");
  auto* tp = app.add_subcommand("train-protocol", "Train the protocol network");
  auto* ta = app.add_subcommand("train-agent", "Train one agent's local model");
  ta->add_option("id", o.agent_id, "Agent id")->required();
  auto* tc = app.add_subcommand("train-cfa", "Train one agent's adapter/reverter pair");
  tc->add_option("id", o.agent_id, "Agent id")->required();
  auto* ev = app.add_subcommand("eval", "Evaluate every configured mode and sigma");
  auto* ab = app.add_subcommand("ablate", "Run one ablation sweep");
  ab->add_option("axis", o.axis, "channel_size, block_kind or loss_combo")->required();
  auto* rp = app.add_subcommand("report", "Render plots and the efficiency report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    const ExperimentConfig cfg = load_config(o);
    const Layout L{o.out};
    if (o.mode && !ev->parsed()) throw ConfigError("--mode only applies to eval");
    if (o.sigma && !ev->parsed()) throw ConfigError("--sigma only applies to eval");
    if (gen->parsed()) cmd_gen_data(L, cfg);
    if (tp->parsed()) cmd_train_protocol(L, cfg);
    if (ta->parsed()) cmd_train_agent(L, cfg, o.agent_id);
    if (tc->parsed()) cmd_train_cfa(L, cfg, o.agent_id);
    if (ev->parsed()) cmd_eval(L, cfg, o);
    if (ab->parsed()) cmd_ablate(L, cfg, o.axis);
    if (rp->parsed()) cmd_report(L, cfg);
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << one_line(e.what()) << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

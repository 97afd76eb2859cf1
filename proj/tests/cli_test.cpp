#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include "cfa_lab/cli/config.hpp"
#include "cfa_lab/harness.hpp"
#include "cfa_lab/pipeline.hpp"

using namespace cfa_lab;
namespace fs = std::filesystem;

namespace {

const std::string kAgents = R"(
[agents.1]
modality = lidar_like
task = detection
channels = 16
resolution = 24
fusion = max_gate
[agents.2]
modality = camera_like
task = static_seg
channels = 8
resolution = 12
depth = 4
fusion = attention
)";

std::string tiny_ini() {
  return "[experiment]\nseed = 5\nn_train_scenes = 3\nn_eval_scenes = 2\nmodes = non_collab, collab_no_cfa, stamp\n"
         "[cfa]\nepochs_local = 1\nepochs_cfa = 1\nsteps_per_epoch = 2\nbatch_k = 2\n" +
         kAgents;
}

struct Run {
  int code;
  std::string err;
};

// Runs the command line tool and returns its exit code and stderr.
Run run_cli(const fs::path& work, const std::string& args) {
  const auto err = work / "stderr.txt";
  const std::string cmd = std::string(CFA_LAB_CLI) + " --config " + (work / "run.ini").string() + " --out " +
                          (work / "out").string() + " " + args + " > " + (work / "stdout.txt").string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text(err)};
}

}  // namespace

TEST(RunConfig, EmptyTextGivesDefaults) {
  const auto c = cli::parse_run_config("");
  const ExperimentConfig d;
  EXPECT_EQ(c.seed, d.seed);
  EXPECT_EQ(c.roster.size(), 4u);
  EXPECT_EQ(c.train.epochs_local, d.train.epochs_local);
}

TEST(RunConfig, ParsesEverySection) {
  const auto c = cli::parse_run_config(
      "# comment\n[world]\nn_objects = 12\nvisibility_radius = 24\n"
      "[protocol]\nchannels = 8  # inline comment\n"
      "[cfa]\nlambda_d_adapt = 0\nblock_kind = conv1x1\ntrain_delta = 30\n"
      "[experiment]\nseed = 9\nsigmas = 0, 0.4\nmodes = stamp\nablation_channels = 8, 4\n" +
      kAgents);
  EXPECT_EQ(c.world.n_objects, 12);
  EXPECT_EQ(c.protocol.channels, 8);
  EXPECT_EQ(c.train.lambda_d_adapt, 0.0);
  EXPECT_EQ(c.block_kind, BlockKind::conv1x1);
  EXPECT_EQ(c.train.delta, 30.0);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.sigmas, (std::vector<double>{0.0, 0.4}));
  EXPECT_EQ(c.modes, std::vector<Mode>{Mode::stamp});
  EXPECT_EQ(c.ablation_channels, (std::vector<int>{8, 4}));
  ASSERT_EQ(c.roster.size(), 2u);
  EXPECT_EQ(c.roster[0].agent_id, 1);
  EXPECT_EQ(c.roster[0].task, Task::detection);
  EXPECT_EQ(c.roster[1].modality, Modality::camera_like);
  EXPECT_EQ(c.roster[1].channels, 8);
  EXPECT_EQ(c.roster[1].resolution, 12);
  EXPECT_EQ(c.roster[1].depth, 4);
  EXPECT_EQ(c.roster[1].fusion, Fusion::attention);
  EXPECT_EQ(c.roster[1].sensor_res, c.sensor.resolution);
}

TEST(RunConfig, RejectsUnknownAndMalformedEntries) {
  const std::vector<std::string> bad = {
      "[world]\ngravity = 9.8\n",
      "[physics]\nx = 1\n",
      "seed = 1\n",
      "[experiment\nseed = 1\n",
      "[experiment]\nseed\n",
      "[experiment]\nseed = \n",
      "[experiment]\nseed = 1\nseed = 2\n",
      "[experiment]\nseed = -1\n",
      "[experiment]\nn_eval_scenes = 2.5\n",
      "[experiment]\nmodes = stamp, teleport\n",
      "[cfa]\nlr_local = fast\n",
      "[cfa]\nneighbor_drop = 1.5\n",
      "[protocol]\nfusion = average\n",
      "[agents.x]\nmodality = lidar_like\n",
  };
  for (const auto& text : bad) EXPECT_THROW(cli::parse_run_config(text), ConfigError) << text;
}

TEST(RunConfig, AgentSectionsNeedTheCoreKeys) {
  for (const char* drop : {"modality", "task", "channels", "resolution", "fusion"}) {
    std::string text = "[agents.1]\n";
    for (const char* k : {"modality", "task", "channels", "resolution", "fusion"})
      if (std::string(k) != drop)
        text += std::string(k) + " = " +
                (std::string(k) == "modality"   ? "lidar_like"
                 : std::string(k) == "task"     ? "detection"
                 : std::string(k) == "fusion"   ? "max_gate"
                 : std::string(k) == "channels" ? "16"
                                                : "24") +
                "\n";
    EXPECT_THROW(cli::parse_run_config(text), ConfigError) << drop;
  }
  EXPECT_THROW(cli::parse_run_config(kAgents + "[agents.1]\nmodality = lidar_like\n"), ConfigError);
  EXPECT_THROW(cli::parse_run_config(kAgents + "[agents.3]\nwheels = 4\n"), ConfigError);
}

TEST(RunConfig, ErrorsNameTheOriginAndLine) {
  try {
    cli::parse_run_config("[world]\n\nextent = 48\nbogus = 1\n", "my.ini");
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("my.ini:4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
  }
}

TEST(RunConfig, ShippedConfigsLoad) {
  for (const char* name : {"default.ini", "quick.ini"}) {
    const auto path = fs::path(CFA_LAB_SOURCE_DIR) / "configs" / name;
    ASSERT_TRUE(fs::exists(path)) << path;
    EXPECT_NO_THROW(cli::load_run_config(path)) << path;
  }
  const auto d = cli::load_run_config(fs::path(CFA_LAB_SOURCE_DIR) / "configs" / "default.ini");
  const ExperimentConfig defaults;
  EXPECT_EQ(config_fingerprint(d), config_fingerprint(defaults));
}

TEST(CommandLine, FullPipelineOnATinyConfig) {
  const auto work = fs::temp_directory_path() / "cfa_lab_cli_test";
  fs::remove_all(work);
  fs::create_directories(work);
  write_text(work / "run.ini", tiny_ini());

  auto r = run_cli(work, "eval");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("error[dependency]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("train-agent 1"), std::string::npos) << r.err;

  EXPECT_EQ(run_cli(work, "train-protocol").code, 3);
  ASSERT_EQ(run_cli(work, "gen-data").code, 0);
  EXPECT_TRUE(fs::exists(work / "out" / "data" / "manifest.json"));
  EXPECT_TRUE(fs::exists(work / "out" / "data" / "train" / "0002.scene"));
  ASSERT_EQ(run_cli(work, "train-protocol").code, 0);
  for (int id : {1, 2}) {
    r = run_cli(work, "train-cfa " + std::to_string(id));
    EXPECT_EQ(r.code, 3) << r.err;
    ASSERT_EQ(run_cli(work, "train-agent " + std::to_string(id)).code, 0);
    ASSERT_EQ(run_cli(work, "train-cfa " + std::to_string(id)).code, 0);
  }
  EXPECT_EQ(run_cli(work, "train-agent 7").code, 2);
  r = run_cli(work, "eval");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto metrics = parse_metrics_csv(read_text(work / "out" / "reports" / "metrics.csv"));
  EXPECT_EQ(metrics.rows.size(), 2u * 3u * 3u);
  EXPECT_TRUE(fs::exists(work / "out" / "reports" / "metrics.json"));
  ASSERT_EQ(run_cli(work, "--mode stamp --sigma 0.2 eval").code, 0);
  EXPECT_EQ(run_cli(work, "eval --mode warp").code, 2);
  ASSERT_EQ(run_cli(work, "report").code, 0);
  EXPECT_TRUE(fs::exists(work / "out" / "reports" / "efficiency.csv"));
  EXPECT_TRUE(fs::exists(work / "out" / "reports" / "plot_sigma.txt"));
  EXPECT_TRUE(fs::exists(work / "out" / "manifests" / "eval.json"));

  // A checkpoint from another shape is refused, naming the command to rerun.
  const auto ckpt = work / "out" / "checkpoints" / "agent1.cfck";
  save_checkpoint(build_agent_params(make_agent(1, Modality::lidar_like, Task::detection, 8, 24, 3, Fusion::max_gate), 0),
                  ckpt);
  r = run_cli(work, "eval");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("rerun train-agent 1"), std::string::npos) << r.err;

  write_file(ckpt, {'j', 'u', 'n', 'k'});
  EXPECT_EQ(run_cli(work, "eval").code, 4);

  // Changing the scene settings invalidates the generated data.
  write_text(work / "run.ini", tiny_ini() + "[world]\nn_objects = 10\n");
  r = run_cli(work, "train-protocol");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("gen-data"), std::string::npos) << r.err;

  EXPECT_EQ(run_cli(work, "").code, 2);
  EXPECT_EQ(run_cli(work, "ablate sideways").code, 2);
  fs::remove_all(work);
}

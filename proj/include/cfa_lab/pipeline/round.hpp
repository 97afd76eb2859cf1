#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "cfa_lab/cfa/adapter.hpp"
#include "cfa_lab/pipeline/message.hpp"
#include "cfa_lab/pipeline/warp.hpp"

namespace cfa_lab {

enum class Mode { non_collab, collab_no_cfa, stamp, late_fusion };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::non_collab: return "non_collab";
    case Mode::collab_no_cfa: return "collab_no_cfa";
    case Mode::stamp: return "stamp";
    default: return "late_fusion";
  }
}

inline Mode parse_mode(const std::string& s) {
  if (s == "non_collab") return Mode::non_collab;
  if (s == "collab_no_cfa") return Mode::collab_no_cfa;
  if (s == "stamp") return Mode::stamp;
  if (s == "late_fusion") return Mode::late_fusion;
  throw ConfigError("unknown mode '" + s + "'");
}

struct RoundAgent {
  Pose true_pose, reported_pose;
  Grid frame;  // the agent's own sensor raster
};

// One collaboration round. Agent k runs models[k] (and pairs[k] in stamp
// mode) of the caller's roster.
struct CollabRound {
  std::vector<RoundAgent> agents;
  double delta = 40.0;
  double sigma = 0.0;
  double half_extent = 24.0;
};

// Renders each roster agent's sensor and perturbs the poses it reports to
// others. The same noise seed draws the same unit normals for every sigma.
inline CollabRound make_round(const Scene& scene, const std::vector<Modality>& modalities, double delta, double sigma,
                              std::uint64_t noise_seed, const SensorConfig& sensor = {},
                              const std::vector<Grid>* frames = nullptr) {
  if (modalities.size() > scene.agents.size())
    throw ConfigError("make_round: roster has " + std::to_string(modalities.size()) + " agents but the scene places " +
                      std::to_string(scene.agents.size()));
  CollabRound r;
  r.delta = delta;
  r.sigma = sigma;
  r.half_extent = sensor.visibility_radius;
  for (std::size_t k = 0; k < modalities.size(); ++k) {
    std::mt19937_64 rng(derive_seed(noise_seed, {0x9053, k}));
    RoundAgent a;
    a.true_pose = scene.agents[k];
    a.reported_pose = perturb_pose(a.true_pose, sigma, rng);
    a.frame = frames ? (*frames)[k]
                     : render(modalities[k], scene.world, a.true_pose, sensor,
                              derive_seed(static_cast<std::uint64_t>(scene.world.scene_id), {0xca3, k}),
                              static_cast<int>(k))
                           .grid;
    r.agents.push_back(std::move(a));
  }
  return r;
}

// Symmetric neighbor sets from reported poses.
inline std::vector<std::vector<std::size_t>> neighbor_sets(const CollabRound& r) {
  const std::size_t n = r.agents.size();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& a = r.agents[i].reported_pose;
      const auto& b = r.agents[j].reported_pose;
      if (std::hypot(a.x - b.x, a.y - b.y) <= r.delta) out[i].push_back(j);
    }
  return out;
}

struct AgentResult {
  ModelOutput output;
  std::vector<Box> boxes;  // detection agents: decoded boxes inside the visibility radius
  Grid fused;
  std::vector<Grid> fusion_inputs;  // ego first; kept only when requested
  std::vector<std::size_t> neighbors;
  std::size_t bytes_received = 0;
};

struct RoundOptions {
  bool keep_fusion_inputs = false;
  double score_threshold = 0.3;
  double nms_iou = 0.5;
};

namespace detail_round {

// Moves an axis-aligned box from a sender frame into the receiver frame.
inline Box box_to_receiver(const Box& b, const Pose& sender_in_receiver) {
  const Point2 c = ego_to_world(sender_in_receiver, b.cx, b.cy);
  const int k = quarter_turns(sender_in_receiver.yaw);
  Box out = b;
  out.cx = c.x;
  out.cy = c.y;
  if (k % 2 == 1) std::swap(out.width, out.height);
  out.direction = (b.direction + k) % 4;
  return out;
}

inline std::vector<Box> in_range(std::vector<Box> boxes, double radius) {
  std::erase_if(boxes, [&](const Box& b) { return std::hypot(b.cx, b.cy) > radius; });
  return boxes;
}

}  // namespace detail_round

// Encode, exchange, fuse and decode for every agent of the round.
//   non_collab:    each agent fuses only its own feature.
//   collab_no_cfa: neighbors' raw features, resized and channel-fitted to
//                  the ego shape, are warped and fused.
//   stamp:         neighbors broadcast φ_j(F_j); the receiver reverts with
//                  ψ_i, warps and fuses. The ego feature is used as is.
//   late_fusion:   detection agents merge same-task neighbors' boxes by NMS;
//                  other agents behave as non_collab.
inline std::vector<AgentResult> run_round(const CollabRound& round, const std::vector<const AgentModel*>& models,
                                          const std::vector<const AdapterReverterPair*>& pairs, Mode mode,
                                          const RoundOptions& opt = {}) {
  const std::size_t n = round.agents.size();
  if (models.size() != n)
    throw ConfigError("run_round: " + std::to_string(models.size()) + " models for " + std::to_string(n) + " agents");
  if (mode == Mode::stamp)
    for (std::size_t k = 0; k < n; ++k)
      if (k >= pairs.size() || !pairs[k])
        throw ConfigError("run_round: stamp mode needs an adapter/reverter pair for agent " +
                          std::to_string(models[k]->spec.agent_id));

  std::vector<Grid> feats(n);
  for (std::size_t k = 0; k < n; ++k) feats[k] = encode(models[k]->spec, models[k]->params, round.agents[k].frame);

  const auto nbrs = mode == Mode::non_collab ? std::vector<std::vector<std::size_t>>(n) : neighbor_sets(round);
  std::vector<std::vector<std::uint8_t>> wire_msgs(n);
  if (mode == Mode::stamp)
    for (std::size_t j = 0; j < n; ++j)
      if (!nbrs[j].empty())
        wire_msgs[j] = serialize(BroadcastMessage::from_feature(static_cast<std::uint32_t>(models[j]->spec.agent_id),
                                                                round.agents[j].reported_pose, adapt(*pairs[j], feats[j])));

  std::vector<AgentResult> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const AgentSpec& spec = models[i]->spec;
    const int R = spec.resolution, C = spec.channels;
    auto& res = out[i];
    res.neighbors = nbrs[i];
    std::vector<Grid> inputs{feats[i]};
    if (mode == Mode::collab_no_cfa || mode == Mode::stamp) {
      for (std::size_t j : nbrs[i]) {
        Grid f;
        Pose sender;
        if (mode == Mode::stamp) {
          const auto msg = deserialize(wire_msgs[j]);
          res.bytes_received += wire_msgs[j].size();
          f = revert(*pairs[i], msg.feature());
          sender = msg.pose();
        } else {
          f = ops::fit_channels(feats[j].dim(2) == R ? feats[j] : ops::resize_bilinear(feats[j], R, R), C);
          sender = round.agents[j].reported_pose;
          res.bytes_received += 4 * f.size();
        }
        inputs.push_back(warp_feature(f, relative_pose(round.agents[i].true_pose, sender), R, R, round.half_extent));
      }
    }
    res.fused = fuse(spec, models[i]->params, inputs, 0);
    res.output = decode(spec, models[i]->params, res.fused);
    if (opt.keep_fusion_inputs) res.fusion_inputs = std::move(inputs);
    if (spec.task == Task::detection)
      res.boxes = detail_round::in_range(
          decode_boxes(res.output.det, opt.score_threshold, opt.nms_iou, round.half_extent), round.half_extent);
  }

  if (mode == Mode::late_fusion) {
    std::vector<std::vector<Box>> own(n);
    for (std::size_t i = 0; i < n; ++i) own[i] = out[i].boxes;
    for (std::size_t i = 0; i < n; ++i) {
      if (models[i]->spec.task != Task::detection) continue;
      std::vector<Box> merged = own[i];
      for (std::size_t j : nbrs[i]) {
        if (models[j]->spec.task != Task::detection) continue;
        const Pose rel = relative_pose(round.agents[i].true_pose, round.agents[j].reported_pose);
        for (const auto& b : own[j]) merged.push_back(detail_round::box_to_receiver(b, rel));
        out[i].bytes_received += own[j].size() * 6 * 4;
      }
      out[i].boxes = detail_round::in_range(nms(std::move(merged), opt.nms_iou), round.half_extent);
    }
  }
  return out;
}

}  // namespace cfa_lab

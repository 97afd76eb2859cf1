#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cfa_lab/numeric.hpp"
#include "cfa_lab/world/world.hpp"

namespace cfa_lab {

enum class Fusion { max_gate, attention };

inline const char* to_string(Fusion f) { return f == Fusion::max_gate ? "max_gate" : "attention"; }

inline Fusion parse_fusion(const std::string& s) {
  if (s == "max_gate") return Fusion::max_gate;
  if (s == "attention") return Fusion::attention;
  throw ConfigError("unknown fusion '" + s + "'");
}

// One heterogeneous perception model: sensor modality, encoder geometry,
// fusion family and downstream task.
struct AgentSpec {
  int agent_id = 0;
  Modality modality = Modality::lidar_like;
  Task task = Task::detection;
  int channels = 16;
  int resolution = 24;
  int depth = 3;
  std::vector<int> stage_widths;  // empty: default ladder
  Fusion fusion = Fusion::max_gate;
  int head_width = 32;
  int sensor_res = 48;
  int out_res = 48;

  std::vector<int> widths() const {
    if (!stage_widths.empty()) return stage_widths;
    static const int ladder[] = {16, 64, 128, 128, 128, 128};
    return std::vector<int>(ladder, ladder + depth);
  }

  Shape feature_shape() const { return {1, channels, resolution, resolution}; }

  void validate() const {
    if (channels <= 0 || resolution <= 0 || depth <= 0 || head_width <= 0 || out_res <= 0)
      throw ConfigError("agent " + std::to_string(agent_id) + ": sizes must be positive");
    if (sensor_res % resolution != 0)
      throw ConfigError("agent " + std::to_string(agent_id) + ": feature resolution " + std::to_string(resolution) +
                        " does not divide sensor resolution " + std::to_string(sensor_res));
    if (sensor_res % (1 << depth) != 0)
      throw ConfigError("agent " + std::to_string(agent_id) + ": depth " + std::to_string(depth) +
                        " halves the sensor raster to a non-integer size");
    if (static_cast<int>(widths().size()) != depth)
      throw ConfigError("agent " + std::to_string(agent_id) + ": stage_widths must list one width per stage");
  }
};

template <typename T>
struct DetectionOutputT {
  BasicGrid<T> cls, reg, dir;
};
using DetectionOutput = DetectionOutputT<float>;

// Either detection heads or segmentation logits, depending on the task.
template <typename T>
struct ModelOutputT {
  Task task = Task::detection;
  DetectionOutputT<T> det;
  BasicGrid<T> seg;
};
using ModelOutput = ModelOutputT<float>;

namespace detail_model {

inline void add_conv(ParamStore& p, const std::string& name, int out, int in, int k, std::mt19937_64& rng) {
  p.add(name + ".weight", init::kaiming_uniform({out, in, k, k}, in * k * k, rng));
  p.add(name + ".bias", init::zeros({out}));
}

template <typename T>
BasicGrid<T> conv(const BasicParamStore<T>& p, const std::string& name, const BasicGrid<T>& x, int stride = 1,
                  int padding = 0, int groups = 1) {
  return ops::conv2d(x, p[name + ".weight"], p[name + ".bias"], stride, padding, groups);
}

}  // namespace detail_model

// Parameters of encoder, fusion and decoder, initialized deterministically
// from `seed` (Kaiming-uniform kernels, zero biases; fusion output maps
// start at identity).
inline ParamStore build_agent_params(const AgentSpec& spec, std::uint64_t seed) {
  using detail_model::add_conv;
  spec.validate();
  std::mt19937_64 rng(derive_seed(seed, {0x3e1, static_cast<std::uint64_t>(spec.agent_id)}));
  ParamStore p;
  const auto w = spec.widths();
  int in = channels_of(spec.modality);
  for (int b = 0; b < spec.depth; ++b) {
    const std::string s = "encoder.stage" + std::to_string(b);
    add_conv(p, s + ".down", w[b], in, 2, rng);
    add_conv(p, s + ".conv", w[b], w[b], 3, rng);
    add_conv(p, "encoder.lateral" + std::to_string(b), spec.channels, w[b], 1, rng);
    in = w[b];
  }
  add_conv(p, "encoder.final", spec.channels, spec.channels, 1, rng);

  const int C = spec.channels;
  if (spec.fusion == Fusion::max_gate) {
    p.add("fusion.gate.weight", init::identity_1x1(C, C));
    p.add("fusion.gate.bias", init::zeros({C}));
  } else {
    add_conv(p, "fusion.query", C, C, 1, rng);
    add_conv(p, "fusion.key", C, C, 1, rng);
    p.add("fusion.out.weight", init::identity_1x1(C, C));
    p.add("fusion.out.bias", init::zeros({C}));
  }

  add_conv(p, "decoder.neck", spec.head_width, C, 3, rng);
  if (spec.task == Task::detection) {
    add_conv(p, "decoder.cls", 1, spec.head_width, 1, rng);
    add_conv(p, "decoder.reg", 4, spec.head_width, 1, rng);
    add_conv(p, "decoder.dir", 2, spec.head_width, 1, rng);
  } else {
    add_conv(p, "decoder.seg", 1, spec.head_width, 1, rng);
  }
  return p;
}

// Multi-scale conv encoder: each stage halves the raster (2x2 stride-2
// conv) and refines it (3x3 conv); every stage output is projected to the
// feature width, brought to the feature resolution and summed.
template <typename T>
BasicGrid<T> encode(const AgentSpec& spec, const BasicParamStore<T>& p, const BasicGrid<T>& frame) {
  using detail_model::conv;
  const int cm = channels_of(spec.modality);
  if (frame.rank() != 4 || frame.dim(1) != cm || frame.dim(2) != spec.sensor_res || frame.dim(3) != spec.sensor_res)
    throw ConfigError("encode: agent " + std::to_string(spec.agent_id) + " expects a " + to_string(spec.modality) +
                      " frame of shape " + shape_str({1, cm, spec.sensor_res, spec.sensor_res}) + ", got " +
                      shape_str(frame.shape()));
  const int R = spec.resolution;
  BasicGrid<T> x = frame, acc;
  for (int b = 0; b < spec.depth; ++b) {
    const std::string s = "encoder.stage" + std::to_string(b);
    x = ops::gelu(conv(p, s + ".down", x, 2, 0));
    x = ops::gelu(conv(p, s + ".conv", x, 1, 1));
    const std::string lat = "encoder.lateral" + std::to_string(b);
    // Resizing and a 1x1 projection commute; run the projection at the
    // smaller raster.
    BasicGrid<T> y = x.dim(2) > R ? conv(p, lat, ops::resize_bilinear(x, R, R))
                                  : ops::resize_bilinear(conv(p, lat, x), R, R);
    acc = b == 0 ? y : ops::add(acc, y);
  }
  return conv(p, "encoder.final", ops::gelu(acc));
}

template <typename T>
BasicGrid<T> encode(const AgentSpec& spec, const BasicParamStore<T>& p, const SensorFrame& frame) {
  if (frame.modality != spec.modality)
    throw ConfigError("encode: agent " + std::to_string(spec.agent_id) + " uses " + to_string(spec.modality) +
                      " but the frame is " + to_string(frame.modality));
  return encode(spec, p, frame.grid.template cast<T>());
}

// Per-cell attention weights of the ego query over all features, stacked as
// channels [1, N, H, W].
template <typename T>
BasicGrid<T> attention_weights(const AgentSpec& spec, const BasicParamStore<T>& p,
                               const std::vector<BasicGrid<T>>& features, std::size_t ego_index) {
  using detail_model::conv;
  const T inv = T(1) / std::sqrt(static_cast<T>(spec.channels));
  const auto q = conv(p, "fusion.query", features[ego_index]);
  std::vector<BasicGrid<T>> logits;
  for (const auto& f : features) logits.push_back(ops::scale(ops::channel_dot(q, conv(p, "fusion.key", f)), inv));
  return ops::softmax_channels(ops::concat_channels(logits));
}

template <typename T>
BasicGrid<T> fuse(const AgentSpec& spec, const BasicParamStore<T>& p, const std::vector<BasicGrid<T>>& features,
                  std::size_t ego_index = 0) {
  using detail_model::conv;
  if (features.empty()) throw PreconditionError("fuse: empty feature list");
  if (ego_index >= features.size()) throw PreconditionError("fuse: ego index out of range");
  for (const auto& f : features)
    if (f.shape() != spec.feature_shape())
      throw DimensionError("fuse: agent " + std::to_string(spec.agent_id) + " expects " +
                           shape_str(spec.feature_shape()) + ", got " + shape_str(f.shape()));
  if (spec.fusion == Fusion::max_gate) {
    const auto m = features.size() == 1 ? features[0] : ops::max_elementwise(features);
    return conv(p, "fusion.gate", m);
  }
  const auto a = attention_weights(spec, p, features, ego_index);
  BasicGrid<T> agg;
  for (std::size_t j = 0; j < features.size(); ++j) {
    const auto term = ops::mul_channel_broadcast(ops::slice_channels(a, static_cast<int>(j), 1), features[j]);
    agg = j == 0 ? term : ops::add(agg, term);
  }
  return conv(p, "fusion.out", agg);
}

template <typename T>
ModelOutputT<T> decode(const AgentSpec& spec, const BasicParamStore<T>& p, const BasicGrid<T>& fused) {
  using detail_model::conv;
  if (fused.shape() != spec.feature_shape())
    throw DimensionError("decode: agent " + std::to_string(spec.agent_id) + " expects " +
                         shape_str(spec.feature_shape()) + ", got " + shape_str(fused.shape()));
  const auto h = ops::gelu(conv(p, "decoder.neck", fused, 1, 1));
  ModelOutputT<T> out;
  out.task = spec.task;
  if (spec.task == Task::detection) {
    out.det = {conv(p, "decoder.cls", h), conv(p, "decoder.reg", h), conv(p, "decoder.dir", h)};
  } else {
    out.seg = ops::resize_bilinear(conv(p, "decoder.seg", h), spec.out_res, spec.out_res);
  }
  return out;
}

// A model instance: its spec plus trained (or freshly initialized) weights.
struct AgentModel {
  AgentSpec spec;
  ParamStore params;

  static AgentModel create(const AgentSpec& spec, std::uint64_t seed) { return {spec, build_agent_params(spec, seed)}; }

  std::size_t encoder_parameter_count() const { return params.parameter_count("encoder."); }
};

}  // namespace cfa_lab

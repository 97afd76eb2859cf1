#pragma once

#include <random>
#include <string>

#include "cfa_lab/models.hpp"

namespace cfa_lab {

// The shared protocol model. Its compressor and decompressor are identity
// maps, so it is simply an agent model whose feature shape defines the
// protocol domain.
struct ProtocolSpec {
  Modality modality = Modality::lidar_like;
  Task task = Task::detection;
  int channels = 16;
  int resolution = 24;
  int depth = 3;
  Fusion fusion = Fusion::max_gate;
  int head_width = 32;

  AgentSpec agent_spec() const {
    AgentSpec s;
    s.agent_id = -1;
    s.modality = modality;
    s.task = task;
    s.channels = channels;
    s.resolution = resolution;
    s.depth = depth;
    s.fusion = fusion;
    s.head_width = head_width;
    return s;
  }

  Shape feature_shape() const { return {1, channels, resolution, resolution}; }
};

enum class BlockKind { convnext_style, conv1x1, self_attention };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::convnext_style: return "convnext_style";
    case BlockKind::conv1x1: return "conv1x1";
    default: return "self_attention";
  }
}

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "convnext_style") return BlockKind::convnext_style;
  if (s == "conv1x1") return BlockKind::conv1x1;
  if (s == "self_attention") return BlockKind::self_attention;
  throw ConfigError("unknown block kind '" + s + "'");
}

// Geometry of one adapter/reverter pair.
struct PairSpec {
  int agent_id = 0;
  int local_channels = 16, local_resolution = 24;
  int protocol_channels = 16, protocol_resolution = 24;
  int hidden = 16;
  int n_blocks = 3;
  BlockKind block_kind = BlockKind::convnext_style;
  bool identity_init = false;

  Shape local_shape() const { return {1, local_channels, local_resolution, local_resolution}; }
  Shape protocol_shape() const { return {1, protocol_channels, protocol_resolution, protocol_resolution}; }

  static PairSpec between(const AgentSpec& agent, const ProtocolSpec& protocol) {
    PairSpec p;
    p.agent_id = agent.agent_id;
    p.local_channels = agent.channels;
    p.local_resolution = agent.resolution;
    p.protocol_channels = protocol.channels;
    p.protocol_resolution = protocol.resolution;
    return p;
  }
};

// φ_i and ψ_i for one agent. Parameters live under "adapter." and
// "reverter." prefixes in a single store.
struct AdapterReverterPair {
  PairSpec spec;
  ParamStore params;

  std::size_t adapter_parameter_count() const { return params.parameter_count("adapter."); }
  std::size_t reverter_parameter_count() const { return params.parameter_count("reverter."); }
  std::size_t parameter_count() const { return params.parameter_count(); }
};

namespace detail_cfa {

inline void add_projection(ParamStore& p, const std::string& name, int out, int in, bool identity,
                           std::mt19937_64& rng) {
  p.add(name + ".weight", identity ? init::identity_1x1(out, in) : init::kaiming_uniform({out, in, 1, 1}, in, rng));
  p.add(name + ".bias", init::zeros({out}));
}

// Residual blocks start as the identity: their last projection is zero.
inline void add_block(ParamStore& p, const std::string& name, int c, BlockKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case BlockKind::convnext_style:
      p.add(name + ".dw.weight", init::kaiming_uniform({c, 1, 7, 7}, 49, rng));
      p.add(name + ".dw.bias", init::zeros({c}));
      p.add(name + ".norm.gamma", init::ones({c}));
      p.add(name + ".norm.beta", init::zeros({c}));
      p.add(name + ".pw1.weight", init::kaiming_uniform({4 * c, c, 1, 1}, c, rng));
      p.add(name + ".pw1.bias", init::zeros({4 * c}));
      p.add(name + ".pw2.weight", init::zeros({c, 4 * c, 1, 1}));
      p.add(name + ".pw2.bias", init::zeros({c}));
      break;
    case BlockKind::conv1x1:
      p.add(name + ".pw.weight", init::zeros({c, c, 1, 1}));
      p.add(name + ".pw.bias", init::zeros({c}));
      break;
    case BlockKind::self_attention:
      p.add(name + ".norm.gamma", init::ones({c}));
      p.add(name + ".norm.beta", init::zeros({c}));
      for (const char* k : {".q", ".k", ".v"}) {
        p.add(name + k + ".weight", init::kaiming_uniform({c, c, 1, 1}, c, rng));
        p.add(name + k + ".bias", init::zeros({c}));
      }
      p.add(name + ".o.weight", init::zeros({c, c, 1, 1}));
      p.add(name + ".o.bias", init::zeros({c}));
      break;
  }
}

template <typename T>
BasicGrid<T> conv(const BasicParamStore<T>& p, const std::string& name, const BasicGrid<T>& x, int padding = 0,
                  int groups = 1) {
  return ops::conv2d(x, p[name + ".weight"], p[name + ".bias"], 1, padding, groups);
}

template <typename T>
BasicGrid<T> block(const BasicParamStore<T>& p, const std::string& name, const BasicGrid<T>& x, BlockKind kind) {
  BasicGrid<T> r;
  switch (kind) {
    case BlockKind::convnext_style: {
      auto h = conv(p, name + ".dw", x, 3, x.dim(1));
      h = ops::channel_affine(ops::layer_norm(h), p[name + ".norm.gamma"], p[name + ".norm.beta"]);
      r = conv(p, name + ".pw2", ops::gelu(conv(p, name + ".pw1", h)));
      break;
    }
    case BlockKind::conv1x1:
      r = conv(p, name + ".pw", ops::gelu(x));
      break;
    case BlockKind::self_attention: {
      const auto h = ops::channel_affine(ops::layer_norm(x), p[name + ".norm.gamma"], p[name + ".norm.beta"]);
      r = conv(p, name + ".o",
               ops::spatial_attention(conv(p, name + ".q", h), conv(p, name + ".k", h), conv(p, name + ".v", h)));
      break;
    }
  }
  return ops::add(x, r);
}

template <typename T>
BasicGrid<T> blocks(const BasicParamStore<T>& p, const std::string& prefix, BasicGrid<T> x, const PairSpec& s) {
  for (int b = 0; b < s.n_blocks; ++b) x = block(p, prefix + ".block" + std::to_string(b), x, s.block_kind);
  return x;
}

}  // namespace detail_cfa

// Projections use Kaiming-uniform weights, or identity 1x1 maps when
// spec.identity_init is set; residual blocks always start as the identity.
inline AdapterReverterPair build_pair(const PairSpec& spec, std::uint64_t seed) {
  using detail_cfa::add_block;
  using detail_cfa::add_projection;
  if (spec.hidden <= 0 || spec.n_blocks < 0 || spec.local_channels <= 0 || spec.protocol_channels <= 0 ||
      spec.local_resolution <= 0 || spec.protocol_resolution <= 0)
    throw ConfigError("pair for agent " + std::to_string(spec.agent_id) + ": sizes must be positive");
  std::mt19937_64 rng(derive_seed(seed, {0xcfa, static_cast<std::uint64_t>(spec.agent_id)}));
  AdapterReverterPair pair{spec, {}};
  auto& p = pair.params;
  add_projection(p, "adapter.in", spec.hidden, spec.local_channels, spec.identity_init, rng);
  for (int b = 0; b < spec.n_blocks; ++b) add_block(p, "adapter.block" + std::to_string(b), spec.hidden, spec.block_kind, rng);
  add_projection(p, "adapter.out", spec.protocol_channels, spec.hidden, spec.identity_init, rng);
  add_projection(p, "reverter.in", spec.hidden, spec.protocol_channels, spec.identity_init, rng);
  for (int b = 0; b < spec.n_blocks; ++b)
    add_block(p, "reverter.block" + std::to_string(b), spec.hidden, spec.block_kind, rng);
  add_projection(p, "reverter.out", spec.local_channels, spec.hidden, spec.identity_init, rng);
  return pair;
}

// φ: local domain to protocol domain.
template <typename T>
BasicGrid<T> adapt(const PairSpec& s, const BasicParamStore<T>& p, const BasicGrid<T>& local) {
  if (local.shape() != s.local_shape())
    throw DimensionError("adapt: agent " + std::to_string(s.agent_id) + " expects " + shape_str(s.local_shape()) +
                         ", got " + shape_str(local.shape()));
  auto x = local;
  if (s.local_resolution != s.protocol_resolution)
    x = ops::resize_bilinear(x, s.protocol_resolution, s.protocol_resolution);
  x = detail_cfa::conv(p, "adapter.in", x);
  x = detail_cfa::blocks(p, "adapter", x, s);
  return detail_cfa::conv(p, "adapter.out", x);
}

// ψ: protocol domain back to the local domain.
template <typename T>
BasicGrid<T> revert(const PairSpec& s, const BasicParamStore<T>& p, const BasicGrid<T>& protocol) {
  if (protocol.shape() != s.protocol_shape())
    throw DimensionError("revert: agent " + std::to_string(s.agent_id) + " expects " +
                         shape_str(s.protocol_shape()) + ", got " + shape_str(protocol.shape()));
  auto x = detail_cfa::conv(p, "reverter.in", protocol);
  x = detail_cfa::blocks(p, "reverter", x, s);
  x = detail_cfa::conv(p, "reverter.out", x);
  if (s.local_resolution != s.protocol_resolution) x = ops::resize_bilinear(x, s.local_resolution, s.local_resolution);
  return x;
}

inline Grid adapt(const AdapterReverterPair& pair, const Grid& local) { return adapt(pair.spec, pair.params, local); }
inline Grid revert(const AdapterReverterPair& pair, const Grid& protocol) {
  return revert(pair.spec, pair.params, protocol);
}

}  // namespace cfa_lab

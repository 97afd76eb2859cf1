#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "cfa_lab/errors.hpp"
#include "cfa_lab/numeric/grid.hpp"
#include "cfa_lab/util/seed.hpp"
#include "cfa_lab/world/geometry.hpp"

namespace cfa_lab {

struct WorldConfig {
  double extent = 48.0;
  int layout_res = 96;
  int n_objects = 16;
  int n_agents = 4;
  double road_width = 8.0;
  double offroad_fraction = 0.2;
  int max_retries = 400;
};

struct SensorConfig {
  int resolution = 48;
  double visibility_radius = 24.0;
  double camera_max_blur = 2.5;
  double camera_noise = 0.03;

  double cell_size() const { return 2.0 * visibility_radius / resolution; }
};

// Objects are axis-aligned boxes in world coordinates, origin at the
// lower-left corner of the square extent.
struct WorldState {
  double extent = 48.0;
  std::vector<Box> objects;
  int layout_res = 96;
  std::vector<std::uint8_t> layout;  // row-major, row index grows with y
  int template_id = 0;
  std::int64_t scene_id = 0;

  bool road_at(double x, double y) const {
    if (x < 0 || y < 0 || x >= extent || y >= extent) return false;
    const double cs = extent / layout_res;
    const int c = std::min(layout_res - 1, static_cast<int>(x / cs));
    const int r = std::min(layout_res - 1, static_cast<int>(y / cs));
    return layout[static_cast<std::size_t>(r) * layout_res + c] != 0;
  }

  // Index of the object covering (x, y), or -1. Boxes are half-open so
  // touching boxes never share a point.
  int object_at(double x, double y) const {
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const Box& b = objects[i];
      if (x >= b.cx - b.width / 2 && x < b.cx + b.width / 2 && y >= b.cy - b.height / 2 && y < b.cy + b.height / 2)
        return static_cast<int>(i);
    }
    return -1;
  }

  bool inside(double x, double y) const { return x >= 0 && y >= 0 && x < extent && y < extent; }
};

struct Scene {
  WorldState world;
  std::vector<Pose> agents;
};

struct SensorFrame {
  Modality modality = Modality::lidar_like;
  Grid grid;
  int agent_id = 0;
};

struct GroundTruth {
  Task task = Task::detection;
  std::vector<Box> boxes;
  Grid mask;
};

namespace detail_world {

struct RoadBand {
  double x0, y0, x1, y1;
  bool horizontal;
};

inline std::vector<RoadBand> road_template(int id, double extent, double w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mid(extent * 0.3, extent * 0.7);
  const double a = mid(rng), b = mid(rng), h = w / 2;
  switch (id) {
    case 0:
      return {{0, a - h, extent, a + h, true}, {b - h, 0, b + h, extent, false}};
    case 1: {
      const bool up = std::bernoulli_distribution(0.5)(rng);
      return {{0, a - h, extent, a + h, true},
              up ? RoadBand{b - h, a + h, b + h, extent, false} : RoadBand{b - h, 0, b + h, a - h, false}};
    }
    case 2: {
      std::uniform_real_distribution<double> lo(extent * 0.2, extent * 0.35), hi(extent * 0.65, extent * 0.8);
      const double y0 = lo(rng), y1 = hi(rng);
      return {{0, y0 - h, extent, y0 + h, true}, {0, y1 - h, extent, y1 + h, true}};
    }
    default: {
      // Both arms of the bend run toward the far side of the extent.
      const RoadBand arm_x = b < extent / 2 ? RoadBand{b - h, a - h, extent, a + h, true}
                                            : RoadBand{0, a - h, b + h, a + h, true};
      const RoadBand arm_y = a < extent / 2 ? RoadBand{b - h, a - h, b + h, extent, false}
                                            : RoadBand{b - h, 0, b + h, a + h, false};
      return {arm_x, arm_y};
    }
  }
}

inline bool boxes_clear(const Box& a, const Box& b, double gap) {
  return std::fabs(a.cx - b.cx) * 2 >= a.width + b.width + 2 * gap ||
         std::fabs(a.cy - b.cy) * 2 >= a.height + b.height + 2 * gap;
}

inline bool box_inside(const Box& b, double extent) {
  return b.cx - b.width / 2 >= 0 && b.cy - b.height / 2 >= 0 && b.cx + b.width / 2 <= extent &&
         b.cy + b.height / 2 <= extent;
}

// Car footprint for a heading code; length runs along the heading.
inline Box car(double cx, double cy, double length, double width, int heading) {
  Box b{cx, cy, length, width, 1.0f, heading};
  if (heading % 2 == 1) std::swap(b.width, b.height);
  return b;
}

}  // namespace detail_world

// Deterministic procedural scene: a road template chosen by seed plus
// non-overlapping cars, most of them in lanes.
inline WorldState generate_world(std::uint64_t seed, int n_objects, const WorldConfig& cfg = {}) {
  using namespace detail_world;
  if (n_objects < 0) throw ConfigError("generate_world: n_objects must be non-negative");
  if (cfg.extent <= 0 || cfg.layout_res <= 0) throw ConfigError("generate_world: extent and layout_res must be positive");
  std::mt19937_64 rng(derive_seed(seed, {0x5ce9e}));
  WorldState w;
  w.extent = cfg.extent;
  w.layout_res = cfg.layout_res;
  w.scene_id = static_cast<std::int64_t>(seed & 0x7fffffffffffffffULL);
  w.template_id = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
  const auto bands = road_template(w.template_id, cfg.extent, cfg.road_width, rng);

  w.layout.assign(static_cast<std::size_t>(cfg.layout_res) * cfg.layout_res, 0);
  const double cs = cfg.extent / cfg.layout_res;
  for (int r = 0; r < cfg.layout_res; ++r)
    for (int c = 0; c < cfg.layout_res; ++c) {
      const double x = (c + 0.5) * cs, y = (r + 0.5) * cs;
      for (const auto& b : bands)
        if (x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1) w.layout[static_cast<std::size_t>(r) * cfg.layout_res + c] = 1;
    }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> length(3.8, 4.8), width(1.8, 2.2);
  for (int i = 0; i < n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      Box b;
      const double len = length(rng), wid = width(rng);
      if (unit(rng) >= cfg.offroad_fraction) {
        const auto& band = bands[std::uniform_int_distribution<std::size_t>(0, bands.size() - 1)(rng)];
        const bool second_lane = unit(rng) < 0.5;
        if (band.horizontal) {
          const double mid = (band.y0 + band.y1) / 2, q = (band.y1 - band.y0) / 4;
          const double x = band.x0 + unit(rng) * (band.x1 - band.x0);
          b = car(x, second_lane ? mid + q : mid - q, len, wid, second_lane ? 2 : 0);
        } else {
          const double mid = (band.x0 + band.x1) / 2, q = (band.x1 - band.x0) / 4;
          const double y = band.y0 + unit(rng) * (band.y1 - band.y0);
          b = car(second_lane ? mid - q : mid + q, y, len, wid, second_lane ? 3 : 1);
        }
      } else {
        b = car(unit(rng) * cfg.extent, unit(rng) * cfg.extent, len, wid,
                std::uniform_int_distribution<int>(0, 3)(rng));
      }
      if (!box_inside(b, cfg.extent)) continue;
      bool ok = true;
      for (const auto& o : w.objects) ok = ok && boxes_clear(b, o, 0.3);
      if (!ok) continue;
      w.objects.push_back(b);
      placed = true;
    }
    if (!placed)
      throw GenerationError("generate_world: could not place object " + std::to_string(i) + " of " +
                            std::to_string(n_objects) + " without overlap");
  }
  return w;
}

// Direction of the road through (x, y): true when the road cell run is
// longer along x than along y.
inline bool road_runs_horizontal(const WorldState& w, double x, double y) {
  const double step = w.extent / w.layout_res;
  auto run = [&](double dx, double dy) {
    int n = 0;
    for (double t = step; t < w.extent; t += step, ++n)
      if (!w.road_at(x + dx * t, y + dy * t)) break;
    return n;
  };
  return run(1, 0) + run(-1, 0) >= run(0, 1) + run(0, -1);
}

// Agent poses on road cells, heading along the road, clear of every object
// and of each other.
inline std::vector<Pose> place_agents(const WorldState& w, int n_agents, std::uint64_t seed, int max_retries = 2000) {
  std::mt19937_64 rng(derive_seed(seed, {0xa9e47}));
  std::uniform_real_distribution<double> coord(2.0, w.extent - 2.0), unit(0.0, 1.0);
  std::vector<Pose> out;
  for (int i = 0; i < n_agents; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < max_retries && !placed; ++attempt) {
      const double x = coord(rng), y = coord(rng);
      if (!w.road_at(x, y)) continue;
      const Box body{x, y, 3.0, 3.0};
      bool ok = true;
      for (const auto& o : w.objects) ok = ok && detail_world::boxes_clear(body, o, 0.5);
      for (const auto& p : out) ok = ok && std::hypot(p.x - x, p.y - y) >= 6.0;
      if (!ok) continue;
      const bool flip = unit(rng) < 0.5;
      const double yaw = (road_runs_horizontal(w, x, y) ? 0.0 : std::numbers::pi / 2) + (flip ? std::numbers::pi : 0.0);
      out.push_back({x, y, yaw});
      placed = true;
    }
    if (!placed) throw GenerationError("place_agents: could not place agent " + std::to_string(i));
  }
  return out;
}

// World plus agent poses. A crowded draw that leaves no room for the agents
// is redrawn from a derived seed; the scene keeps `seed` as its id.
inline Scene generate_scene(std::uint64_t seed, const WorldConfig& cfg = {}) {
  constexpr int kAttempts = 16;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const std::uint64_t s = attempt == 0 ? seed : derive_seed(seed, {0x7e7a1, static_cast<std::uint64_t>(attempt)});
    try {
      Scene out;
      out.world = generate_world(s, cfg.n_objects, cfg);
      out.agents = place_agents(out.world, cfg.n_agents, s);
      out.world.scene_id = static_cast<std::int64_t>(seed & 0x7fffffffffffffffULL);
      return out;
    } catch (const GenerationError&) {
      if (attempt + 1 == kAttempts) throw;
    }
  }
  throw GenerationError("generate_scene: unreachable");
}

// Location-only Gaussian noise; yaw is kept.
template <typename Rng>
Pose perturb_pose(const Pose& p, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigError("perturb_pose: sigma must be non-negative");
  if (sigma == 0) return p;
  std::normal_distribution<double> n(0.0, sigma);
  Pose out = p;
  out.x += n(rng);
  out.y += n(rng);
  return out;
}

namespace detail_world {

// Per-cell classification of an ego raster: -2 outside the visibility disk,
// -1 outside the world, 0 ground, 1 road, 2 + k object k.
struct EgoView {
  int res = 0;
  std::vector<int> cls;
  std::vector<std::uint8_t> visible;
};

inline Point2 cell_center_ego(int r, int c, int res, double cs) {
  return {(c + 0.5 - res / 2.0) * cs, (r + 0.5 - res / 2.0) * cs};
}

inline bool in_disk(int r, int c, int res, double cs, double radius) {
  const Point2 e = cell_center_ego(r, c, res, cs);
  return std::hypot(e.x, e.y) <= radius;
}

// A cell is hidden when the ray from the agent to its center passes through
// an object cell before reaching it, so objects also hide their own far side.
inline EgoView view(const WorldState& w, const Pose& pose, const SensorConfig& s) {
  const int R = s.resolution;
  const double cs = s.cell_size();
  EgoView v;
  v.res = R;
  v.cls.assign(static_cast<std::size_t>(R) * R, -2);
  v.visible.assign(v.cls.size(), 0);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < R; ++c) {
      if (!in_disk(r, c, R, cs, s.visibility_radius)) continue;
      const Point2 e = cell_center_ego(r, c, R, cs);
      const Point2 p = ego_to_world(pose, e.x, e.y);
      int k = -1;
      if (!w.inside(p.x, p.y)) k = -1;
      else if (int o = w.object_at(p.x, p.y); o >= 0) k = 2 + o;
      else k = w.road_at(p.x, p.y) ? 1 : 0;
      v.cls[static_cast<std::size_t>(r) * R + c] = k;
    }
  const double o = R / 2.0;  // agent position in cell units
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < R; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * R + c;
      if (v.cls[idx] == -2) continue;
      const double tx = c + 0.5, ty = r + 0.5;
      const double len = std::hypot(tx - o, ty - o);
      const int steps = static_cast<int>(std::ceil(len / 0.25));
      bool hidden = false;
      for (int i = 1; i < steps && !hidden; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int sc = static_cast<int>(std::floor(o + t * (tx - o)));
        const int sr = static_cast<int>(std::floor(o + t * (ty - o)));
        if (sc < 0 || sr < 0 || sc >= R || sr >= R || (sc == c && sr == r)) continue;
        hidden = v.cls[static_cast<std::size_t>(sr) * R + sc] >= 2;
      }
      v.visible[idx] = hidden ? 0 : 1;
    }
  return v;
}

}  // namespace detail_world

// Occupancy (channel 0) and height proxy (channel 1) of the visible cells.
inline SensorFrame render_lidar_like(const WorldState& w, const Pose& pose, const SensorConfig& s = {},
                                     int agent_id = 0) {
  const auto v = detail_world::view(w, pose, s);
  const std::size_t plane = v.cls.size();
  std::vector<float> g(2 * plane, 0.0f);
  for (std::size_t i = 0; i < plane; ++i) {
    if (!v.visible[i]) continue;
    if (v.cls[i] >= 2) {
      g[i] = 1.0f;
      g[plane + i] = 1.0f;
    } else if (v.cls[i] == 1) {
      g[i] = 1.0f;
      g[plane + i] = 0.4f;
    }
  }
  return {Modality::lidar_like, Grid::from({1, 2, s.resolution, s.resolution}, std::move(g)), agent_id};
}

namespace detail_world {

constexpr float kGroundColor[3] = {0.30f, 0.45f, 0.25f};
constexpr float kRoadColor[3] = {0.50f, 0.50f, 0.55f};
constexpr float kObjectColor[3] = {0.85f, 0.25f, 0.20f};

}  // namespace detail_world

// Blur standard deviation in cells at a given distance (cells) from the agent.
inline double camera_blur_sigma(double distance_cells, const SensorConfig& s) {
  const double range_cells = s.visibility_radius / s.cell_size();
  return s.camera_max_blur * std::min(distance_cells, range_cells) / range_cells;
}

// Appearance colors of the visible cells, blurred with a distance-dependent
// Gaussian (restricted to the visibility disk) and perturbed by seeded
// sensor noise.
inline SensorFrame render_camera_like(const WorldState& w, const Pose& pose, const SensorConfig& s = {},
                                      std::uint64_t seed = 0, int agent_id = 0) {
  using namespace detail_world;
  const auto v = view(w, pose, s);
  const int R = s.resolution;
  const std::size_t plane = v.cls.size();
  std::vector<float> sharp(3 * plane, 0.0f);
  for (std::size_t i = 0; i < plane; ++i) {
    if (!v.visible[i] || v.cls[i] < 0) continue;
    const float* col = v.cls[i] >= 2 ? kObjectColor : (v.cls[i] == 1 ? kRoadColor : kGroundColor);
    for (int ch = 0; ch < 3; ++ch) sharp[ch * plane + i] = col[ch];
  }
  std::vector<float> out(3 * plane, 0.0f);
  const double o = R / 2.0;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < R; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * R + c;
      if (v.cls[idx] == -2) continue;
      const double sigma = camera_blur_sigma(std::hypot(c + 0.5 - o, r + 0.5 - o), s);
      if (sigma < 1e-3) {
        for (int ch = 0; ch < 3; ++ch) out[ch * plane + idx] = sharp[ch * plane + idx];
        continue;
      }
      const int rad = static_cast<int>(std::ceil(3 * sigma));
      double acc[3] = {0, 0, 0}, wsum = 0;
      for (int dr = -rad; dr <= rad; ++dr)
        for (int dc = -rad; dc <= rad; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= R || cc >= R) continue;
          if (v.cls[static_cast<std::size_t>(rr) * R + cc] == -2) continue;
          const double wt = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
          const std::size_t j = static_cast<std::size_t>(rr) * R + cc;
          for (int ch = 0; ch < 3; ++ch) acc[ch] += wt * sharp[ch * plane + j];
          wsum += wt;
        }
      for (int ch = 0; ch < 3; ++ch) out[ch * plane + idx] = static_cast<float>(acc[ch] / wsum);
    }
  if (s.camera_noise > 0) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(w.scene_id), static_cast<std::uint64_t>(agent_id),
                                           0xca3e7a}));
    std::normal_distribution<double> n(0.0, s.camera_noise);
    for (std::size_t i = 0; i < plane; ++i) {
      if (v.cls[i] == -2) continue;
      for (int ch = 0; ch < 3; ++ch) {
        float& x = out[ch * plane + i];
        x = static_cast<float>(std::clamp(x + n(rng), 0.0, 1.0));
      }
    }
  }
  return {Modality::camera_like, Grid::from({1, 3, R, R}, std::move(out)), agent_id};
}

inline SensorFrame render(Modality m, const WorldState& w, const Pose& pose, const SensorConfig& s = {},
                          std::uint64_t seed = 0, int agent_id = 0) {
  return m == Modality::lidar_like ? render_lidar_like(w, pose, s, agent_id)
                                   : render_camera_like(w, pose, s, seed, agent_id);
}

// Labels in the true ego frame over the visibility disk. Detection keeps
// every object whose center is in range, occluded or not.
inline GroundTruth make_ground_truth(const WorldState& w, const Pose& true_pose, Task task, const SensorConfig& s = {},
                                     int out_res = 48) {
  if (out_res <= 0) throw ConfigError("make_ground_truth: out_res must be positive");
  GroundTruth gt;
  gt.task = task;
  if (task == Task::detection) {
    for (const auto& o : w.objects) {
      const Box e = box_to_ego(true_pose, o);
      if (std::hypot(e.cx, e.cy) <= s.visibility_radius) gt.boxes.push_back(e);
    }
    return gt;
  }
  const double cs = 2.0 * s.visibility_radius / out_res;
  std::vector<float> m(static_cast<std::size_t>(out_res) * out_res, 0.0f);
  for (int r = 0; r < out_res; ++r)
    for (int c = 0; c < out_res; ++c) {
      if (!detail_world::in_disk(r, c, out_res, cs, s.visibility_radius)) continue;
      const Point2 e = detail_world::cell_center_ego(r, c, out_res, cs);
      const Point2 p = ego_to_world(true_pose, e.x, e.y);
      const bool on = task == Task::dynamic_seg ? w.object_at(p.x, p.y) >= 0 : w.road_at(p.x, p.y);
      m[static_cast<std::size_t>(r) * out_res + c] = on ? 1.0f : 0.0f;
    }
  gt.mask = Grid::from({1, 1, out_res, out_res}, std::move(m));
  return gt;
}

// Cells of an out_res raster inside the visibility disk.
inline std::vector<std::uint8_t> visibility_disk(int out_res, const SensorConfig& s = {}) {
  const double cs = 2.0 * s.visibility_radius / out_res;
  std::vector<std::uint8_t> d(static_cast<std::size_t>(out_res) * out_res, 0);
  for (int r = 0; r < out_res; ++r)
    for (int c = 0; c < out_res; ++c) d[static_cast<std::size_t>(r) * out_res + c] = detail_world::in_disk(r, c, out_res, cs, s.visibility_radius);
  return d;
}

}  // namespace cfa_lab

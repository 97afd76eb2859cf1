#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "cfa_lab/errors.hpp"

namespace cfa_lab {

enum class Modality { lidar_like, camera_like };
enum class Task { detection, static_seg, dynamic_seg };

inline const char* to_string(Modality m) { return m == Modality::lidar_like ? "lidar_like" : "camera_like"; }

inline const char* to_string(Task t) {
  switch (t) {
    case Task::detection: return "detection";
    case Task::static_seg: return "static_seg";
    case Task::dynamic_seg: return "dynamic_seg";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "lidar_like" || s == "lidar") return Modality::lidar_like;
  if (s == "camera_like" || s == "camera") return Modality::camera_like;
  throw ConfigError("unknown modality '" + s + "'");
}

inline Task parse_task(const std::string& s) {
  if (s == "detection") return Task::detection;
  if (s == "static_seg") return Task::static_seg;
  if (s == "dynamic_seg") return Task::dynamic_seg;
  throw ConfigError("unknown task '" + s + "'");
}

inline int channels_of(Modality m) { return m == Modality::lidar_like ? 2 : 3; }

struct Pose {
  double x = 0, y = 0, yaw = 0;
};

// Heading codes: 0 = +x, 1 = +y, 2 = -x, 3 = -y.
struct Box {
  double cx = 0, cy = 0, width = 1, height = 1;
  float score = 1.0f;
  int direction = 0;
};

struct Point2 {
  double x, y;
};

inline Point2 world_to_ego(const Pose& p, double wx, double wy) {
  const double dx = wx - p.x, dy = wy - p.y;
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Point2 ego_to_world(const Pose& p, double ex, double ey) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {p.x + c * ex - s * ey, p.y + s * ex + c * ey};
}

// Pose of `other` expressed in the frame of `ref`.
inline Pose relative_pose(const Pose& ref, const Pose& other) {
  const Point2 t = world_to_ego(ref, other.x, other.y);
  return {t.x, t.y, other.yaw - ref.yaw};
}

// Number of quarter turns closest to yaw, in [0, 4).
inline int quarter_turns(double yaw) {
  const long k = std::lround(yaw / (std::numbers::pi / 2));
  return static_cast<int>(((k % 4) + 4) % 4);
}

// Expresses a world box in the ego frame. Boxes stay axis-aligned, so the
// footprint swaps width and height when the frame is rotated by an odd
// number of quarter turns.
inline Box box_to_ego(const Pose& p, const Box& b) {
  const Point2 c = world_to_ego(p, b.cx, b.cy);
  const int k = quarter_turns(p.yaw);
  Box out = b;
  out.cx = c.x;
  out.cy = c.y;
  if (k % 2 == 1) std::swap(out.width, out.height);
  out.direction = ((b.direction - k) % 4 + 4) % 4;
  return out;
}

// Axis-aligned IoU.
inline double box_iou(const Box& a, const Box& b) {
  const double ix = std::min(a.cx + a.width / 2, b.cx + b.width / 2) - std::max(a.cx - a.width / 2, b.cx - b.width / 2);
  const double iy =
      std::min(a.cy + a.height / 2, b.cy + b.height / 2) - std::max(a.cy - a.height / 2, b.cy - b.height / 2);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.width * a.height + b.width * b.height - inter);
}

}  // namespace cfa_lab

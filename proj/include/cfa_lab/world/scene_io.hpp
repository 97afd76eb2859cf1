#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "cfa_lab/world/world.hpp"

namespace cfa_lab {

// Text scene fixture, version 1:
//
//   cfa-lab-scene 1
//   scene_id <int>
//   extent <real>
//   template <int>
//   objects <n>
//   object <cx> <cy> <width> <height> <direction>     (n lines)
//   agents <m>
//   agent <x> <y> <yaw>                               (m lines)
//   layout <res> <run count> <run> <run> ...
//
// Layout runs alternate 0-cells and 1-cells in row-major order, starting
// with a (possibly empty) run of zeros. Reals are written with 17
// significant digits so that a load reproduces them exactly.
inline constexpr int kSceneFormatVersion = 1;

namespace detail_scene {

inline std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail_scene

inline std::string dump_scene(const Scene& s) {
  using detail_scene::real;
  const WorldState& w = s.world;
  std::ostringstream os;
  os << "cfa-lab-scene " << kSceneFormatVersion << "\n";
  os << "scene_id " << w.scene_id << "\n";
  os << "extent " << real(w.extent) << "\n";
  os << "template " << w.template_id << "\n";
  os << "objects " << w.objects.size() << "\n";
  for (const auto& b : w.objects)
    os << "object " << real(b.cx) << " " << real(b.cy) << " " << real(b.width) << " " << real(b.height) << " "
       << b.direction << "\n";
  os << "agents " << s.agents.size() << "\n";
  for (const auto& p : s.agents) os << "agent " << real(p.x) << " " << real(p.y) << " " << real(p.yaw) << "\n";
  std::vector<std::size_t> runs;
  std::uint8_t cur = 0;
  std::size_t n = 0;
  for (std::uint8_t v : w.layout) {
    const std::uint8_t b = v ? 1 : 0;
    if (b != cur) {
      runs.push_back(n);
      cur = b;
      n = 0;
    }
    ++n;
  }
  runs.push_back(n);
  os << "layout " << w.layout_res << " " << runs.size();
  for (auto r : runs) os << " " << r;
  os << "\n";
  return os.str();
}

inline Scene load_scene(const std::string& text) {
  std::istringstream is(text);
  auto expect = [&](const char* key) {
    std::string k;
    if (!(is >> k) || k != key) throw LoadError(std::string("scene: expected '") + key + "'");
  };
  int version = 0;
  expect("cfa-lab-scene");
  if (!(is >> version) || version != kSceneFormatVersion)
    throw LoadError("scene: unsupported version " + std::to_string(version));
  Scene s;
  WorldState& w = s.world;
  std::size_t count = 0;
  expect("scene_id");
  is >> w.scene_id;
  expect("extent");
  is >> w.extent;
  expect("template");
  is >> w.template_id;
  expect("objects");
  is >> count;
  for (std::size_t i = 0; i < count; ++i) {
    Box b;
    expect("object");
    if (!(is >> b.cx >> b.cy >> b.width >> b.height >> b.direction)) throw LoadError("scene: bad object record");
    w.objects.push_back(b);
  }
  expect("agents");
  is >> count;
  for (std::size_t i = 0; i < count; ++i) {
    Pose p;
    expect("agent");
    if (!(is >> p.x >> p.y >> p.yaw)) throw LoadError("scene: bad agent record");
    s.agents.push_back(p);
  }
  expect("layout");
  std::size_t nruns = 0;
  if (!(is >> w.layout_res >> nruns) || w.layout_res <= 0) throw LoadError("scene: bad layout header");
  const std::size_t cells = static_cast<std::size_t>(w.layout_res) * w.layout_res;
  w.layout.reserve(cells);
  std::uint8_t cur = 0;
  for (std::size_t i = 0; i < nruns; ++i) {
    std::size_t r = 0;
    if (!(is >> r)) throw LoadError("scene: truncated layout runs");
    if (w.layout.size() + r > cells) throw LoadError("scene: layout runs exceed raster size");
    w.layout.insert(w.layout.end(), r, cur);
    cur ^= 1;
  }
  if (w.layout.size() != cells) throw LoadError("scene: layout runs do not cover the raster");
  if (!is) throw LoadError("scene: malformed file");
  return s;
}

}  // namespace cfa_lab

#pragma once

#include <map>
#include <set>
#include <vector>

#include "cfa_lab/world.hpp"

namespace cfa_lab {

enum class Split : std::uint64_t { train = 1, eval = 2 };

// Train and eval scenes draw from disjoint seed streams.
inline std::uint64_t scene_seed(std::uint64_t base, Split split, std::size_t index) {
  return derive_seed(base, {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index)});
}

// Pre-rendered scenes: sensor frames per modality and labels per task for
// every agent of every scene.
struct Dataset {
  SensorConfig sensor;
  std::vector<Scene> scenes;
  std::map<Modality, std::vector<std::vector<Grid>>> frames;
  std::map<Task, std::vector<std::vector<GroundTruth>>> labels;

  std::size_t size() const { return scenes.size(); }
  std::size_t agents(std::size_t s) const { return scenes.at(s).agents.size(); }

  const Grid& frame(Modality m, std::size_t s, std::size_t a) const {
    const auto it = frames.find(m);
    if (it == frames.end()) throw ConfigError(std::string("dataset has no ") + to_string(m) + " frames");
    return it->second.at(s).at(a);
  }

  const GroundTruth& gt(Task t, std::size_t s, std::size_t a) const {
    const auto it = labels.find(t);
    if (it == labels.end()) throw ConfigError(std::string("dataset has no ") + to_string(t) + " labels");
    return it->second.at(s).at(a);
  }
};

inline Dataset make_dataset(std::uint64_t base_seed, Split split, std::size_t n_scenes, const std::set<Modality>& modalities,
                            const std::set<Task>& tasks, const WorldConfig& world = {}, const SensorConfig& sensor = {}) {
  Dataset d;
  d.sensor = sensor;
  for (auto m : modalities) d.frames[m].resize(n_scenes);
  for (auto t : tasks) d.labels[t].resize(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const std::uint64_t seed = scene_seed(base_seed, split, i);
    d.scenes.push_back(generate_scene(seed, world));
    const Scene& sc = d.scenes.back();
    for (std::size_t a = 0; a < sc.agents.size(); ++a) {
      const int id = static_cast<int>(a);
      for (auto m : modalities)
        d.frames[m][i].push_back(render(m, sc.world, sc.agents[a], sensor, derive_seed(seed, {0xca3, a}), id).grid);
      for (auto t : tasks) d.labels[t][i].push_back(make_ground_truth(sc.world, sc.agents[a], t, sensor));
    }
  }
  return d;
}

}  // namespace cfa_lab

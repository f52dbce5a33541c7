#pragma once

// Synthetic action sequences with planted regime changes: piecewise-constant
// 2-D actions plus small uniform noise. Test-only oracle for segmentation.

#include <cmath>
#include <cstdint>
#include <vector>

#include "famarl/env/continuous_world.hpp"
#include "famarl/rng.hpp"

namespace famarl::testing {

struct PlantedEpisode {
  std::vector<env::PrimitiveAction> actions;
  std::vector<int> boundaries;  // index of the first step of each new regime
};

inline PlantedEpisode planted_episode(Rng& rng, int changes = 5, int min_len = 12, int max_len = 24,
                                      double noise = 0.02, double min_jump = 0.5) {
  PlantedEpisode ep;
  env::PrimitiveAction level{rng.uniform(-1, 1), rng.uniform(-1, 1)};
  for (int r = 0; r <= changes; ++r) {
    if (r > 0) {
      env::PrimitiveAction next;
      do {
        next = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
      } while (std::hypot(next.ax - level.ax, next.ay - level.ay) < min_jump);
      level = next;
      ep.boundaries.push_back(static_cast<int>(ep.actions.size()));
    }
    const auto len = rng.uniform_int(min_len, max_len);
    for (int t = 0; t < len; ++t)
      ep.actions.push_back({level.ax + rng.uniform(-noise, noise), level.ay + rng.uniform(-noise, noise)});
  }
  return ep;
}

}  // namespace famarl::testing

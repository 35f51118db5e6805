#pragma once

#include <cmath>
#include <vector>

#include "trajgen/road_network.hpp"
#include "trajgen/synthworld.hpp"

namespace trajgen::testing {

// Small grid world shared by several tests.
inline WorldConfig small_world(int n = 4, int trajectories = 300, std::uint64_t seed = 11) {
  WorldConfig w;
  w.width = n;
  w.height = n;
  w.num_trajectories = trajectories;
  w.min_links = 2;
  w.seed = seed;
  return w;
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace trajgen::testing

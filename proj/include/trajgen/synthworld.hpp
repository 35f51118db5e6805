#pragma once

#include <cstdint>
#include <vector>

#include "trajgen/common.hpp"
#include "trajgen/road_network.hpp"

namespace trajgen {

struct WorldConfig {
  int width = 10;   // intersections along x
  int height = 10;  // intersections along y
  double link_length = 100.0;  // meters
  int num_trajectories = 5000;
  double gravity_exponent = 2.0;  // OD weight ~ pop(o) pop(d) / dist^exponent
  double detour_prob = 0.1;
  int min_links = 5;
  std::uint64_t seed = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// w x h lattice; every street becomes two directed links.
RoadNetwork generate_grid_network(const WorldConfig& cfg);

// Seeded lognormal(0, 0.5) popularity per node.
std::vector<double> node_popularity(const WorldConfig& cfg, std::size_t num_nodes);

// Planted OD law over ordered node pairs (o != d), unnormalized, row-major o * n + d.
std::vector<double> planted_od_weights(const RoadNetwork& network, const WorldConfig& cfg);

// Shortest-path distance (meters) from every node to `target`.
std::vector<double> distances_to(const RoadNetwork& network, NodeId target);

// Oracle corpus: OD pairs from the planted gravity law, shortest-path routes
// with single-step detours (probability detour_prob per intersection) and
// shortest-path resumption. Trajectories shorter than min_links are redrawn.
Corpus simulate_corpus(const RoadNetwork& network, const WorldConfig& cfg);

}  // namespace trajgen

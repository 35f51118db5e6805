#pragma once

#include <span>
#include <vector>

#include "trajgen/common.hpp"
#include "trajgen/road_network.hpp"

namespace trajgen {

// Uniform grid partition of the network bounding box. Links belong to the
// cell containing their centroid; points on an interior cell boundary go to
// the lower-index cell.
struct RegionMap {
  int grid_width = 1;
  int grid_height = 1;
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;
  double cell_width = 0.0, cell_height = 0.0;
  bool degenerate = false;  // all geometry coincident; collapsed to one region
  std::vector<int> link_region;
  std::vector<Point> region_centroid;  // mean of member-link centroids, cell center if empty
  std::vector<int> region_size;        // member link count

  int num_regions() const { return grid_width * grid_height; }
  int region_of(LinkId link) const { return link_region.at(static_cast<std::size_t>(link)); }
  // Distance used for same-region pairs: half the cell diagonal.
  double distance_floor() const;
};

RegionMap build_region_map(const RoadNetwork& network, int grid_width, int grid_height);

// Cell index of a coordinate under the lower-index boundary rule.
int grid_cell_index(double value, double lo, double cell_size, int cells);

// RegionW: trajectories starting in r plus trajectories ending in r.
std::vector<double> region_weights(std::span<const Trajectory> corpus, const RegionMap& rmap);

double region_distance(int rx, int ry, const RegionMap& rmap);

// RegionW(rx) * RegionW(ry) / d^2(rx, ry).
double gravity(int rx, int ry, std::span<const double> weights, const RegionMap& rmap);

class GravityTable {
 public:
  GravityTable(std::vector<double> weights, const RegionMap& rmap);

  int num_regions() const { return n_; }
  double operator()(int rx, int ry) const { return values_[index(rx, ry)]; }
  double distance_squared(int rx, int ry) const { return dist2_[index(rx, ry)]; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::size_t index(int rx, int ry) const {
    return static_cast<std::size_t>(rx) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(ry);
  }

  int n_ = 0;
  std::vector<double> weights_;
  std::vector<double> values_;
  std::vector<double> dist2_;
};

GravityTable build_gravity_table(std::span<const Trajectory> corpus, const RegionMap& rmap);

}  // namespace trajgen

#include "trajgen/region.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trajgen {

double RegionMap::distance_floor() const {
  const double half_diag = 0.5 * std::hypot(cell_width, cell_height);
  return half_diag > 0.0 ? half_diag : 1.0;
}

int grid_cell_index(double value, double lo, double cell_size, int cells) {
  if (cells <= 1 || !(cell_size > 0.0)) return 0;
  int idx = static_cast<int>(std::ceil((value - lo) / cell_size)) - 1;
  idx = std::clamp(idx, 0, cells - 1);
  // Settle rounding so the result agrees with edges lo + k * cell_size.
  while (idx > 0 && value <= lo + idx * cell_size) --idx;
  while (idx < cells - 1 && value > lo + (idx + 1) * cell_size) ++idx;
  return idx;
}

RegionMap build_region_map(const RoadNetwork& network, int grid_width, int grid_height) {
  if (grid_width < 1 || grid_height < 1) throw std::invalid_argument("region grid dimensions must be >= 1");
  if (network.empty()) throw std::invalid_argument("region map needs a nonempty network");

  RegionMap m;
  m.xmin = m.ymin = std::numeric_limits<double>::infinity();
  m.xmax = m.ymax = -std::numeric_limits<double>::infinity();
  for (const auto& n : network.nodes()) {
    m.xmin = std::min(m.xmin, n.x);
    m.xmax = std::max(m.xmax, n.x);
    m.ymin = std::min(m.ymin, n.y);
    m.ymax = std::max(m.ymax, n.y);
  }
  m.degenerate = m.xmax == m.xmin && m.ymax == m.ymin;
  m.grid_width = m.degenerate ? 1 : grid_width;
  m.grid_height = m.degenerate ? 1 : grid_height;
  m.cell_width = (m.xmax - m.xmin) / m.grid_width;
  m.cell_height = (m.ymax - m.ymin) / m.grid_height;

  const auto regions = static_cast<std::size_t>(m.num_regions());
  std::vector<Point> sum(regions);
  m.region_size.assign(regions, 0);
  m.link_region.resize(network.num_links());
  for (std::size_t i = 0; i < network.num_links(); ++i) {
    const Point c = network.centroid(static_cast<LinkId>(i));
    const int ix = grid_cell_index(c.x, m.xmin, m.cell_width, m.grid_width);
    const int iy = grid_cell_index(c.y, m.ymin, m.cell_height, m.grid_height);
    const int r = iy * m.grid_width + ix;
    m.link_region[i] = r;
    sum[static_cast<std::size_t>(r)].x += c.x;
    sum[static_cast<std::size_t>(r)].y += c.y;
    ++m.region_size[static_cast<std::size_t>(r)];
  }
  m.region_centroid.resize(regions);
  for (std::size_t r = 0; r < regions; ++r) {
    if (m.region_size[r] > 0) {
      m.region_centroid[r] = {sum[r].x / m.region_size[r], sum[r].y / m.region_size[r]};
    } else {
      const auto ix = static_cast<double>(r % static_cast<std::size_t>(m.grid_width));
      const auto iy = static_cast<double>(r / static_cast<std::size_t>(m.grid_width));
      m.region_centroid[r] = {m.xmin + (ix + 0.5) * m.cell_width, m.ymin + (iy + 0.5) * m.cell_height};
    }
  }
  return m;
}

std::vector<double> region_weights(std::span<const Trajectory> corpus, const RegionMap& rmap) {
  std::vector<double> w(static_cast<std::size_t>(rmap.num_regions()), 0.0);
  for (const auto& t : corpus) {
    if (t.empty()) throw std::invalid_argument("region_weights: empty trajectory");
    w[static_cast<std::size_t>(rmap.region_of(t.front()))] += 1.0;
    w[static_cast<std::size_t>(rmap.region_of(t.back()))] += 1.0;
  }
  return w;
}

double region_distance(int rx, int ry, const RegionMap& rmap) {
  if (rx == ry) return rmap.distance_floor();
  const Point a = rmap.region_centroid.at(static_cast<std::size_t>(rx));
  const Point b = rmap.region_centroid.at(static_cast<std::size_t>(ry));
  const double d = std::hypot(a.x - b.x, a.y - b.y);
  return d > 0.0 ? d : rmap.distance_floor();
}

double gravity(int rx, int ry, std::span<const double> weights, const RegionMap& rmap) {
  const double d = region_distance(rx, ry, rmap);
  return weights[static_cast<std::size_t>(rx)] * weights[static_cast<std::size_t>(ry)] / (d * d);
}

GravityTable::GravityTable(std::vector<double> weights, const RegionMap& rmap)
    : n_(rmap.num_regions()), weights_(std::move(weights)) {
  if (weights_.size() != static_cast<std::size_t>(n_)) {
    throw std::invalid_argument("gravity table: weight count does not match region count");
  }
  values_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_));
  dist2_.resize(values_.size());
  for (int x = 0; x < n_; ++x) {
    for (int y = 0; y < n_; ++y) {
      const double d = region_distance(x, y, rmap);
      dist2_[index(x, y)] = d * d;
      values_[index(x, y)] = gravity(x, y, weights_, rmap);
    }
  }
}

GravityTable build_gravity_table(std::span<const Trajectory> corpus, const RegionMap& rmap) {
  return GravityTable(region_weights(corpus, rmap), rmap);
}

}  // namespace trajgen

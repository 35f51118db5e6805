#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajgen/connectivity.hpp"
#include "trajgen/region.hpp"
#include "trajgen/rng.hpp"
#include "trajgen/road_network.hpp"

namespace trajgen {

struct Histogram {
  std::vector<double> edges;  // bins + 1, strictly increasing
  std::vector<double> mass;   // sums to 1
  std::size_t count = 0;

  std::size_t bins() const { return mass.size(); }
};

// Uniform bins over [lo, hi]; the last bin is closed. A zero-width range is
// widened by 0.5 on each side.
Histogram make_histogram(std::span<const double> values, double lo, double hi, int bins);

// Histograms of two samples over edges spanning their pooled range.
std::pair<Histogram, Histogram> shared_histograms(std::span<const double> a, std::span<const double> b, int bins);

// Jensen-Shannon divergence, base 2.
double jsd(const Histogram& p, const Histogram& q);

using RegionPair = std::pair<int, int>;
using CategoryCounts = std::map<RegionPair, double>;

// Aligned categorical histograms over the union of both key sets; every cell
// gets `smoothing` added before normalization.
std::pair<Histogram, Histogram> categorical_histograms(const CategoryCounts& a, const CategoryCounts& b,
                                                       double smoothing);

// (region(first), region(last)) tallies.
CategoryCounts od_counts(std::span<const Trajectory> corpus, const RegionMap& rmap);
// Gravity(rx, ry) from the corpus's own RegionW over every ordered region pair.
CategoryCounts gravity_values(std::span<const Trajectory> corpus, const RegionMap& rmap);

double radius_of_gyration(std::span<const LinkId> traj, const RoadNetwork& net);
std::vector<double> trip_lengths(std::span<const Trajectory> corpus, const RoadNetwork& net);
std::vector<double> radii(std::span<const Trajectory> corpus, const RoadNetwork& net);

// Fraction of trajectories whose consecutive link pairs are all RC-allowed.
double connectivity(std::span<const Trajectory> corpus, const ConnectivityMatrix& rcm);

// Number of trajectories passing through each link.
std::vector<double> link_trajectory_counts(std::span<const Trajectory> corpus, int num_links);

// Mean of |f_real(l) - f_syn(l)| / max(f_real(l), s) over uniformly sampled
// links l (without replacement), s = 1% of the real corpus size.
double query_error(std::span<const Trajectory> real, std::span<const Trajectory> syn, int num_links,
                   int n_queries, std::uint64_t seed);
double query_error(std::span<const Trajectory> real, std::span<const Trajectory> syn,
                   std::span<const LinkId> queries);

// Start link and successors drawn in proportion to real visitation counts
// among graph-adjacent links; length drawn from the real length distribution.
Corpus random_walk_baseline(const RoadNetwork& net, std::span<const Trajectory> real, int n, std::uint64_t seed);

// First-order Markov chain over links with an absorbing end state, fitted by
// maximum likelihood.
class MarkovChain {
 public:
  MarkovChain(std::span<const Trajectory> corpus, int num_links);

  int num_links() const { return num_links_; }
  int end_state() const { return num_links_; }
  double start_probability(LinkId l) const;
  // P(next | from); next == end_state() for termination.
  double transition(LinkId from, int next) const;
  Trajectory sample(Rng& rng, int max_len) const;

 private:
  int num_links_;
  std::vector<double> start_counts_;
  double start_total_ = 0.0;
  std::vector<std::vector<std::pair<int, double>>> rows_;  // sorted by next
  std::vector<double> row_totals_;
  CategoricalSampler start_sampler_;
  std::vector<CategoricalSampler> row_samplers_;
};

Corpus mmc_baseline(std::span<const Trajectory> real, int num_links, int n, std::uint64_t seed, int max_len = 0);

struct EvalConfig {
  int grid_width = 8;
  int grid_height = 8;
  int bins = 50;
  int n_queries = 500;
  double smoothing = 1e-12;
  std::uint64_t seed = 1;

  void validate() const;
};

struct MetricRow {
  std::string name;
  double query_error = 0.0;
  double jsd_od = 0.0;
  double jsd_trip_length = 0.0;
  double jsd_radius = 0.0;
  double jsd_gravity = 0.0;
  double connectivity = 0.0;
  std::size_t size = 0;
};

MetricRow evaluate_corpus(const std::string& name, std::span<const Trajectory> real, std::span<const Trajectory> syn,
                          const RoadNetwork& net, const RegionMap& rmap, const ConnectivityMatrix& rcm,
                          const EvalConfig& cfg);

struct MetricsReport {
  static constexpr int kVersion = 1;
  std::size_t real_size = 0;
  std::vector<MetricRow> rows;  // synthetic first, then baselines
  std::string config_hash;
  std::uint64_t seed = 0;
};

MetricsReport report(std::span<const Trajectory> real, std::span<const Trajectory> syn, const RoadNetwork& net,
                     const RegionMap& rmap, const ConnectivityMatrix& rcm, const EvalConfig& cfg,
                     bool with_baselines);

void write_report_json(std::ostream& out, const MetricsReport& rep);
// corpus,length_m,radius_m per trajectory.
void write_plot_csv(std::ostream& out, std::span<const std::pair<std::string, const Corpus*>> corpora,
                    const RoadNetwork& net);

}  // namespace trajgen

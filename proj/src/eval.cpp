#include "trajgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "trajgen/rltf.hpp"

namespace trajgen {

Histogram make_histogram(std::span<const double> values, double lo, double hi, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("bad histogram range");
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  const double width = (hi - lo) / bins;
  for (int i = 0; i < bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
  h.edges.back() = hi;
  h.mass.assign(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    if (v < lo || v > hi) throw std::out_of_range("value outside histogram range");
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    auto idx = static_cast<std::size_t>(std::distance(h.edges.begin(), it)) - 1;
    idx = std::min(idx, h.mass.size() - 1);
    h.mass[idx] += 1.0;
  }
  h.count = values.size();
  if (h.count > 0) {
    for (double& m : h.mass) m /= static_cast<double>(h.count);
  }
  return h;
}

std::pair<Histogram, Histogram> shared_histograms(std::span<const double> a, std::span<const double> b, int bins) {
  if (a.empty() || b.empty()) throw std::invalid_argument("shared_histograms: empty sample");
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*amin, *bmin);
  const double hi = std::max(*amax, *bmax);
  return {make_histogram(a, lo, hi, bins), make_histogram(b, lo, hi, bins)};
}

double jsd(const Histogram& p, const Histogram& q) {
  if (p.edges != q.edges || p.mass.size() != q.mass.size()) throw std::invalid_argument("jsd: histogram edges differ");
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.mass.size(); ++i) {
    const double m = 0.5 * (p.mass[i] + q.mass[i]);
    if (p.mass[i] > 0.0) kl_p += p.mass[i] * std::log2(p.mass[i] / m);
    if (q.mass[i] > 0.0) kl_q += q.mass[i] * std::log2(q.mass[i] / m);
  }
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, 1.0);
}

std::pair<Histogram, Histogram> categorical_histograms(const CategoryCounts& a, const CategoryCounts& b,
                                                       double smoothing) {
  std::vector<RegionPair> keys;
  for (const auto& [k, v] : a) keys.push_back(k);
  for (const auto& [k, v] : b) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (keys.empty()) throw std::invalid_argument("categorical_histograms: no categories");
  auto build = [&](const CategoryCounts& c) {
    Histogram h;
    h.edges.resize(keys.size() + 1);
    std::iota(h.edges.begin(), h.edges.end(), 0.0);
    h.mass.resize(keys.size());
    double total = 0.0, count = 0.0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      auto it = c.find(keys[i]);
      const double v = it == c.end() ? 0.0 : it->second;
      count += v;
      h.mass[i] = v + smoothing;
      total += h.mass[i];
    }
    if (!(total > 0.0)) throw std::invalid_argument("categorical_histograms: zero total mass");
    for (double& m : h.mass) m /= total;
    h.count = static_cast<std::size_t>(std::llround(count));
    return h;
  };
  return {build(a), build(b)};
}

CategoryCounts od_counts(std::span<const Trajectory> corpus, const RegionMap& rmap) {
  CategoryCounts c;
  for (const auto& t : corpus) {
    if (t.empty()) throw std::invalid_argument("od_counts: empty trajectory");
    c[{rmap.region_of(t.front()), rmap.region_of(t.back())}] += 1.0;
  }
  return c;
}

CategoryCounts gravity_values(std::span<const Trajectory> corpus, const RegionMap& rmap) {
  const auto w = region_weights(corpus, rmap);
  CategoryCounts c;
  const int n = rmap.num_regions();
  for (int x = 0; x < n; ++x) {
    for (int y = 0; y < n; ++y) c[{x, y}] = gravity(x, y, w, rmap);
  }
  return c;
}

double radius_of_gyration(std::span<const LinkId> traj, const RoadNetwork& net) {
  if (traj.empty()) throw std::invalid_argument("radius_of_gyration: empty trajectory");
  double mx = 0.0, my = 0.0;
  for (LinkId l : traj) {
    mx += net.centroid(l).x;
    my += net.centroid(l).y;
  }
  const auto n = static_cast<double>(traj.size());
  mx /= n;
  my /= n;
  double s = 0.0;
  for (LinkId l : traj) {
    const double dx = net.centroid(l).x - mx, dy = net.centroid(l).y - my;
    s += dx * dx + dy * dy;
  }
  return std::sqrt(s / n);
}

std::vector<double> trip_lengths(std::span<const Trajectory> corpus, const RoadNetwork& net) {
  std::vector<double> out;
  out.reserve(corpus.size());
  for (const auto& t : corpus) out.push_back(traj_length(t, net));
  return out;
}

std::vector<double> radii(std::span<const Trajectory> corpus, const RoadNetwork& net) {
  std::vector<double> out;
  out.reserve(corpus.size());
  for (const auto& t : corpus) out.push_back(radius_of_gyration(t, net));
  return out;
}

double connectivity(std::span<const Trajectory> corpus, const ConnectivityMatrix& rcm) {
  if (corpus.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& t : corpus) {
    bool connected = true;
    for (std::size_t i = 1; i < t.size() && connected; ++i) connected = rcm.allowed(t[i - 1], t[i]);
    if (connected) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(corpus.size());
}

std::vector<double> link_trajectory_counts(std::span<const Trajectory> corpus, int num_links) {
  std::vector<double> f(static_cast<std::size_t>(num_links), 0.0);
  std::vector<std::size_t> seen(static_cast<std::size_t>(num_links), 0);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (LinkId l : corpus[i]) {
      if (l < 0 || l >= num_links) throw std::out_of_range("link id outside the network");
      auto& mark = seen[static_cast<std::size_t>(l)];
      if (mark == i + 1) continue;
      mark = i + 1;
      f[static_cast<std::size_t>(l)] += 1.0;
    }
  }
  return f;
}

double query_error(std::span<const Trajectory> real, std::span<const Trajectory> syn,
                   std::span<const LinkId> queries) {
  if (real.empty() || syn.empty()) throw std::invalid_argument("query_error: empty corpus");
  if (queries.empty()) throw std::invalid_argument("query_error: no queries");
  int num_links = 0;
  for (LinkId q : queries) num_links = std::max(num_links, q + 1);
  for (const auto& c : {real, syn}) {
    for (const auto& t : c) {
      for (LinkId l : t) num_links = std::max(num_links, l + 1);
    }
  }
  const auto fr = link_trajectory_counts(real, num_links);
  const auto fs = link_trajectory_counts(syn, num_links);
  const double s = 0.01 * static_cast<double>(real.size());
  double total = 0.0;
  for (LinkId q : queries) {
    const double a = fr[static_cast<std::size_t>(q)], b = fs[static_cast<std::size_t>(q)];
    total += std::abs(a - b) / std::max(a, s);
  }
  return total / static_cast<double>(queries.size());
}

double query_error(std::span<const Trajectory> real, std::span<const Trajectory> syn, int num_links,
                   int n_queries, std::uint64_t seed) {
  if (num_links < 1 || n_queries < 1) throw std::invalid_argument("query_error: no links to query");
  std::vector<LinkId> links(static_cast<std::size_t>(num_links));
  std::iota(links.begin(), links.end(), 0);
  Rng rng = make_rng(seed, "eval.queries");
  const auto k = std::min(links.size(), static_cast<std::size_t>(n_queries));
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < k; ++i) std::swap(links[i], links[i + uniform_index(rng, links.size() - i)]);
  links.resize(k);
  return query_error(real, syn, links);
}

Corpus random_walk_baseline(const RoadNetwork& net, std::span<const Trajectory> real, int n, std::uint64_t seed) {
  if (real.empty()) throw std::invalid_argument("random walk baseline needs a real corpus");
  if (n < 1) throw std::invalid_argument("random walk baseline: n must be >= 1");
  std::vector<double> visits(net.num_links(), 0.0);
  std::vector<double> lengths;
  for (const auto& t : real) {
    for (LinkId l : t) visits.at(static_cast<std::size_t>(l)) += 1.0;
    if (lengths.size() < t.size() + 1) lengths.resize(t.size() + 1, 0.0);
    lengths[t.size()] += 1.0;
  }
  const CategoricalSampler start(visits);
  const CategoricalSampler length(lengths);
  Corpus out;
  out.reserve(static_cast<std::size_t>(n));
  std::vector<double> w;
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "baseline.random_walk", static_cast<std::uint64_t>(i));
    const auto target = length.sample(rng);
    Trajectory t{static_cast<LinkId>(start.sample(rng))};
    while (t.size() < target) {
      const auto next = net.successors(t.back());
      if (next.empty()) break;
      w.assign(next.size(), 0.0);
      for (std::size_t j = 0; j < next.size(); ++j) w[j] = visits[static_cast<std::size_t>(next[j])];
      const double tot = std::accumulate(w.begin(), w.end(), 0.0);
      const std::size_t pick = tot > 0.0 ? CategoricalSampler(w).sample(rng) : uniform_index(rng, next.size());
      t.push_back(next[pick]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

MarkovChain::MarkovChain(std::span<const Trajectory> corpus, int num_links)
    : num_links_(num_links),
      start_counts_(static_cast<std::size_t>(num_links), 0.0),
      rows_(static_cast<std::size_t>(num_links)),
      row_totals_(static_cast<std::size_t>(num_links), 0.0) {
  if (num_links < 1) throw std::invalid_argument("MarkovChain: no links");
  std::vector<std::map<int, double>> counts(static_cast<std::size_t>(num_links));
  for (const auto& t : corpus) {
    if (t.empty()) continue;
    for (LinkId l : t) {
      if (l < 0 || l >= num_links) throw std::out_of_range("MarkovChain: link id outside the network");
    }
    start_counts_[static_cast<std::size_t>(t.front())] += 1.0;
    start_total_ += 1.0;
    for (std::size_t i = 1; i < t.size(); ++i) counts[static_cast<std::size_t>(t[i - 1])][t[i]] += 1.0;
    counts[static_cast<std::size_t>(t.back())][end_state()] += 1.0;
  }
  if (start_total_ == 0.0) throw std::invalid_argument("MarkovChain: empty corpus");
  start_sampler_ = CategoricalSampler(start_counts_);
  row_samplers_.resize(static_cast<std::size_t>(num_links));
  for (std::size_t a = 0; a < counts.size(); ++a) {
    std::vector<double> w;
    for (const auto& [next, c] : counts[a]) {
      rows_[a].emplace_back(next, c);
      row_totals_[a] += c;
      w.push_back(c);
    }
    if (!w.empty()) row_samplers_[a] = CategoricalSampler(w);
  }
}

double MarkovChain::start_probability(LinkId l) const {
  return start_counts_.at(static_cast<std::size_t>(l)) / start_total_;
}

double MarkovChain::transition(LinkId from, int next) const {
  const auto& row = rows_.at(static_cast<std::size_t>(from));
  const double total = row_totals_[static_cast<std::size_t>(from)];
  if (total == 0.0) return next == end_state() ? 1.0 : 0.0;  // never observed: absorb
  auto it = std::lower_bound(row.begin(), row.end(), next,
                             [](const std::pair<int, double>& e, int v) { return e.first < v; });
  return it != row.end() && it->first == next ? it->second / total : 0.0;
}

Trajectory MarkovChain::sample(Rng& rng, int max_len) const {
  Trajectory t{static_cast<LinkId>(start_sampler_.sample(rng))};
  while (max_len <= 0 || static_cast<int>(t.size()) < max_len) {
    const auto& row = rows_[static_cast<std::size_t>(t.back())];
    if (row.empty()) break;
    const int next = row[row_samplers_[static_cast<std::size_t>(t.back())].sample(rng)].first;
    if (next == end_state()) break;
    t.push_back(next);
  }
  return t;
}

Corpus mmc_baseline(std::span<const Trajectory> real, int num_links, int n, std::uint64_t seed, int max_len) {
  if (n < 1) throw std::invalid_argument("MMC baseline: n must be >= 1");
  const MarkovChain chain(real, num_links);
  if (max_len <= 0) {
    std::size_t longest = 1;
    for (const auto& t : real) longest = std::max(longest, t.size());
    max_len = static_cast<int>(4 * longest);
  }
  Corpus out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "baseline.mmc", static_cast<std::uint64_t>(i));
    out.push_back(chain.sample(rng, max_len));
  }
  return out;
}

void EvalConfig::validate() const {
  if (grid_width < 1) throw ConfigError("eval.grid_width must be >= 1");
  if (grid_height < 1) throw ConfigError("eval.grid_height must be >= 1");
  if (bins < 1) throw ConfigError("eval.bins must be >= 1");
  if (n_queries < 1) throw ConfigError("eval.n_queries must be >= 1");
  if (!(smoothing >= 0.0)) throw ConfigError("eval.smoothing must be >= 0");
}

MetricRow evaluate_corpus(const std::string& name, std::span<const Trajectory> real, std::span<const Trajectory> syn,
                          const RoadNetwork& net, const RegionMap& rmap, const ConnectivityMatrix& rcm,
                          const EvalConfig& cfg) {
  cfg.validate();
  if (real.empty() || syn.empty()) throw std::invalid_argument("evaluate: empty corpus");
  MetricRow row;
  row.name = name;
  row.size = syn.size();
  row.query_error = query_error(real, syn, static_cast<int>(net.num_links()), cfg.n_queries, cfg.seed);
  {
    const auto [p, q] = categorical_histograms(od_counts(real, rmap), od_counts(syn, rmap), cfg.smoothing);
    row.jsd_od = jsd(p, q);
  }
  {
    const auto [p, q] = shared_histograms(trip_lengths(real, net), trip_lengths(syn, net), cfg.bins);
    row.jsd_trip_length = jsd(p, q);
  }
  {
    const auto [p, q] = shared_histograms(radii(real, net), radii(syn, net), cfg.bins);
    row.jsd_radius = jsd(p, q);
  }
  {
    const auto [p, q] = categorical_histograms(gravity_values(real, rmap), gravity_values(syn, rmap), cfg.smoothing);
    row.jsd_gravity = jsd(p, q);
  }
  row.connectivity = connectivity(syn, rcm);
  return row;
}

MetricsReport report(std::span<const Trajectory> real, std::span<const Trajectory> syn, const RoadNetwork& net,
                     const RegionMap& rmap, const ConnectivityMatrix& rcm, const EvalConfig& cfg,
                     bool with_baselines) {
  MetricsReport rep;
  rep.real_size = real.size();
  rep.seed = cfg.seed;
  rep.rows.push_back(evaluate_corpus("synthetic", real, syn, net, rmap, rcm, cfg));
  if (with_baselines) {
    const int n = static_cast<int>(syn.size());
    const Corpus rw = random_walk_baseline(net, real, n, cfg.seed);
    rep.rows.push_back(evaluate_corpus("random_walk", real, rw, net, rmap, rcm, cfg));
    const Corpus mmc = mmc_baseline(real, static_cast<int>(net.num_links()), n, cfg.seed);
    rep.rows.push_back(evaluate_corpus("mmc", real, mmc, net, rmap, rcm, cfg));
  }
  return rep;
}

void write_report_json(std::ostream& out, const MetricsReport& rep) {
  nlohmann::ordered_json j;
  j["format"] = "trajgen-metrics";
  j["version"] = MetricsReport::kVersion;
  j["config_hash"] = rep.config_hash;
  j["seed"] = rep.seed;
  j["real_size"] = rep.real_size;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows) {
    nlohmann::ordered_json o;
    o["name"] = r.name;
    o["size"] = r.size;
    o["query_error"] = r.query_error;
    o["jsd_od"] = r.jsd_od;
    o["jsd_trip_length"] = r.jsd_trip_length;
    o["jsd_radius"] = r.jsd_radius;
    o["jsd_gravity"] = r.jsd_gravity;
    o["connectivity"] = r.connectivity;
    rows.push_back(std::move(o));
  }
  j["rows"] = std::move(rows);
  out << j.dump(2) << '\n';
}

void write_plot_csv(std::ostream& out, std::span<const std::pair<std::string, const Corpus*>> corpora,
                    const RoadNetwork& net) {
  out << "corpus,length_m,radius_m,links\n";
  char buf[128];
  for (const auto& [name, corpus] : corpora) {
    for (const auto& t : *corpus) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu", traj_length(t, net), radius_of_gyration(t, net), t.size());
      out << name << ',' << buf << '\n';
    }
  }
}

}  // namespace trajgen

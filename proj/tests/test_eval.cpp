#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "trajgen/eval.hpp"

using namespace trajgen;

namespace {

Histogram from_mass(std::vector<double> mass) {
  Histogram h;
  h.mass = std::move(mass);
  for (std::size_t i = 0; i <= h.mass.size(); ++i) h.edges.push_back(static_cast<double>(i));
  return h;
}

double kl2(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) s += p[i] * std::log2(p[i] / q[i]);
  }
  return s;
}

double jsd_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl2(p, m) + 0.5 * kl2(q, m);
}

std::vector<double> random_mass(Rng& rng, std::size_t n, bool zeros) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = (zeros && uniform01(rng) < 0.3) ? 0.0 : uniform01(rng);
    s += x;
  }
  if (s == 0.0) v[0] = s = 1.0;
  for (auto& x : v) x /= s;
  return v;
}

// Plain line-segment road: link i runs from node i to node i + 1.
RoadNetwork line_network(int links, double spacing) {
  std::vector<RoadNode> nodes;
  std::vector<RoadLink> ls;
  for (int i = 0; i <= links; ++i) nodes.push_back({spacing * i, 0.0});
  for (int i = 0; i < links; ++i) ls.push_back({i, i + 1, spacing});
  return RoadNetwork(nodes, ls);
}

Corpus random_corpus(Rng& rng, int n, int num_links, int max_len) {
  Corpus c;
  for (int i = 0; i < n; ++i) {
    Trajectory t;
    const auto len = 1 + uniform_index(rng, static_cast<std::size_t>(max_len));
    for (std::size_t k = 0; k < len; ++k) t.push_back(static_cast<LinkId>(uniform_index(rng, static_cast<std::size_t>(num_links))));
    c.push_back(t);
  }
  return c;
}

}  // namespace

TEST_CASE("jsd examples") {
  const Histogram p = from_mass({1.0, 0.0}), q = from_mass({0.0, 1.0});
  CHECK(jsd(p, q) == 1.0);
  CHECK(jsd(p, p) == 0.0);
  const Histogram r = from_mass({0.2, 0.3, 0.5});
  CHECK(jsd(r, r) == 0.0);
  Histogram shifted = from_mass({0.5, 0.5});
  shifted.edges[1] = 0.5;
  CHECK_THROWS(jsd(p, shifted));
  CHECK_THROWS(jsd(p, r));
}

TEST_CASE("jsd matches the two-term oracle") {
  Rng rng = make_rng(1, "test.jsd");
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + uniform_index(rng, 12);
    const auto a = random_mass(rng, n, true), b = random_mass(rng, n, true);
    const double v = jsd(from_mass(a), from_mass(b));
    REQUIRE(std::abs(v - jsd_oracle(a, b)) < 1e-12);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(std::abs(v - jsd(from_mass(b), from_mass(a))) < 1e-15);
  }
}

TEST_CASE("histogram matches manual binning") {
  Rng rng = make_rng(2, "test.hist");
  for (int trial = 0; trial < 100; ++trial) {
    const int bins = 1 + static_cast<int>(uniform_index(rng, 20));
    std::vector<double> a(1 + uniform_index(rng, 40)), b(1 + uniform_index(rng, 40));
    for (auto& x : a) x = std::round(uniform01(rng) * 50.0) * 10.0;  // ties on edges happen
    for (auto& x : b) x = uniform01(rng) * 600.0 - 50.0;
    const auto [ha, hb] = shared_histograms(a, b, bins);
    double lo = a[0], hi = a[0];
    for (const auto* v : {&a, &b}) {
      for (double x : *v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    REQUIRE(ha.edges.size() == static_cast<std::size_t>(bins) + 1);
    REQUIRE(ha.edges == hb.edges);
    REQUIRE(ha.edges.front() == lo);
    REQUIRE(ha.edges.back() == hi);
    for (int i = 0; i < bins; ++i) {
      REQUIRE(std::abs(ha.edges[static_cast<std::size_t>(i)] - (lo + (hi - lo) * i / bins)) < 1e-10);
    }
    for (const auto& [vals, h] : {std::pair{&a, &ha}, std::pair{&b, &hb}}) {
      std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
      for (double x : *vals) {
        std::size_t k = 0;
        while (k + 1 < static_cast<std::size_t>(bins) && !(x < h->edges[k + 1])) ++k;
        counts[k] += 1.0;
      }
      double total = 0.0;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        REQUIRE(std::abs(h->mass[k] - counts[k] / static_cast<double>(vals->size())) < 1e-10);
        total += h->mass[k];
      }
      REQUIRE(std::abs(total - 1.0) < 1e-9);
      REQUIRE(h->count == vals->size());
    }
  }
}

TEST_CASE("all-equal values occupy one bin") {
  const std::vector<double> v{300.0, 300.0, 300.0};
  const auto [p, q] = shared_histograms(v, v, 50);
  CHECK(std::count_if(p.mass.begin(), p.mass.end(), [](double m) { return m > 0; }) == 1);
  CHECK(p.edges.front() == 299.5);
  CHECK(p.edges.back() == 300.5);
  CHECK(jsd(p, q) == 0.0);
  CHECK_THROWS(make_histogram(v, 0.0, 1.0, 0));
}

TEST_CASE("radius of gyration") {
  const RoadNetwork line = line_network(3, 2.0);  // centroids at 1, 3, 5
  CHECK(radius_of_gyration(Trajectory{1}, line) == 0.0);
  CHECK(radius_of_gyration(Trajectory{0, 0}, line) == 0.0);
  // Centroids (1,0) and (3,0): mean (2,0), rg 1.
  CHECK(radius_of_gyration(Trajectory{0, 1}, line) == doctest::Approx(1.0).epsilon(1e-15));

  const RoadNetwork net = generate_grid_network(testing::small_world(5));
  Rng rng = make_rng(3, "test.rg");
  const Corpus c = random_corpus(rng, 50, static_cast<int>(net.num_links()), 12);
  // Shifted and rotated copy of the network.
  std::vector<RoadNode> nodes = net.nodes();
  for (auto& n : nodes) n = {0.6 * n.x - 0.8 * n.y + 1234.5, 0.8 * n.x + 0.6 * n.y - 77.0};
  const RoadNetwork moved(nodes, net.links());
  const auto rg = radii(c, net);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double mx = 0, my = 0;
    for (LinkId l : c[i]) {
      mx += net.centroid(l).x;
      my += net.centroid(l).y;
    }
    const double n = static_cast<double>(c[i].size());
    mx /= n;
    my /= n;
    double s = 0.0;
    for (LinkId l : c[i]) s += std::pow(net.centroid(l).x - mx, 2) + std::pow(net.centroid(l).y - my, 2);
    REQUIRE(std::abs(rg[i] - std::sqrt(s / n)) < 1e-10);
    REQUIRE(std::abs(radius_of_gyration(c[i], moved) - rg[i]) < 1e-8);
  }
  CHECK_THROWS(radius_of_gyration(Trajectory{}, net));
}

TEST_CASE("trip lengths") {
  const RoadNetwork net = generate_grid_network(testing::small_world(5));
  Rng rng = make_rng(4, "test.len");
  const Corpus c = random_corpus(rng, 50, static_cast<int>(net.num_links()), 12);
  const auto len = trip_lengths(c, net);
  for (std::size_t i = 0; i < c.size(); ++i) {
    double s = 0.0;
    for (LinkId l : c[i]) s += net.links()[static_cast<std::size_t>(l)].length;
    REQUIRE(std::abs(len[i] - s) < 1e-10);
  }
}

TEST_CASE("query error") {
  // One link with f(real) = 10, f(syn) = 8 and s = 2.
  Corpus real(200, Trajectory{1});
  for (int i = 0; i < 10; ++i) real[static_cast<std::size_t>(i)] = Trajectory{0, 1};
  Corpus syn(50, Trajectory{1});
  for (int i = 0; i < 8; ++i) syn[static_cast<std::size_t>(i)] = Trajectory{0, 0, 1};  // revisits count once
  const std::vector<LinkId> q0{0};
  CHECK(query_error(real, syn, q0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(query_error(real, real, 2, 500, 1) == 0.0);

  // Below the sanity bound the denominator is s.
  const Corpus tiny_syn{Trajectory{2}};
  const std::vector<LinkId> q2{2};
  CHECK(query_error(real, tiny_syn, q2) == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng = make_rng(5, "test.qe");
  for (int trial = 0; trial < 30; ++trial) {
    const int links = 3 + static_cast<int>(uniform_index(rng, 30));
    const Corpus a = random_corpus(rng, 5 + static_cast<int>(uniform_index(rng, 300)), links, 6);
    const Corpus b = random_corpus(rng, 5 + static_cast<int>(uniform_index(rng, 300)), links, 6);
    std::vector<LinkId> qs;
    for (int k = 0; k < 10; ++k) qs.push_back(static_cast<LinkId>(uniform_index(rng, static_cast<std::size_t>(links))));
    double expect = 0.0;
    for (LinkId q : qs) {
      double fa = 0, fb = 0;
      for (const auto& t : a) fa += std::find(t.begin(), t.end(), q) != t.end();
      for (const auto& t : b) fb += std::find(t.begin(), t.end(), q) != t.end();
      expect += std::abs(fa - fb) / std::max(fa, 0.01 * static_cast<double>(a.size()));
    }
    expect /= static_cast<double>(qs.size());
    REQUIRE(std::abs(query_error(a, b, qs) - expect) < 1e-10);

    Corpus a2 = a, b2 = b;
    a2.insert(a2.end(), a.begin(), a.end());
    b2.insert(b2.end(), b.begin(), b.end());
    REQUIRE(std::abs(query_error(a2, b2, qs) - query_error(a, b, qs)) < 1e-12);
  }
  // More queries than links: every link once.
  const Corpus a = random_corpus(rng, 40, 7, 4), b = random_corpus(rng, 40, 7, 4);
  const std::vector<LinkId> all{0, 1, 2, 3, 4, 5, 6};
  CHECK(query_error(a, b, 7, 500, 3) == doctest::Approx(query_error(a, b, all)).epsilon(1e-14));
  CHECK_THROWS(query_error(Corpus{}, b, all));
}

TEST_CASE("od and gravity distributions") {
  const RoadNetwork net = generate_grid_network(testing::small_world(5));
  const RegionMap rmap = build_region_map(net, 2, 2);
  Rng rng = make_rng(6, "test.od");
  const Corpus c = random_corpus(rng, 60, static_cast<int>(net.num_links()), 8);
  const auto od = od_counts(c, rmap);
  CategoryCounts tally;
  for (const auto& t : c) tally[{rmap.region_of(t.front()), rmap.region_of(t.back())}] += 1.0;
  CHECK(od == tally);

  const Corpus one{c[0]};
  const auto [p, q] = categorical_histograms(od_counts(one, rmap), od_counts(one, rmap), 0.0);
  CHECK(p.mass == std::vector<double>{1.0});
  CHECK(jsd(p, q) == 0.0);

  CategoryCounts x{{{0, 1}, 3.0}}, y{{{1, 0}, 2.0}};
  const auto [hx, hy] = categorical_histograms(x, y, 0.0);
  CHECK(jsd(hx, hy) == 1.0);
  const auto [sx, sy] = categorical_histograms(x, y, 1e-12);
  CHECK(jsd(sx, sy) > 0.999999);
  double total = 0.0;
  for (double m : sx.mass) total += m;
  CHECK(std::abs(total - 1.0) < 1e-12);

  const auto g = gravity_values(c, rmap);
  CHECK(g.size() == 16);
  const auto w = region_weights(c, rmap);
  for (const auto& [k, v] : g) {
    REQUIRE(std::abs(v - gravity(k.first, k.second, w, rmap)) < 1e-12);
  }
  // Same endpoint tallies, different interiors.
  Corpus c2 = c;
  for (auto& t : c2) {
    if (t.size() > 2) t.erase(t.begin() + 1);
  }
  const auto [g1, g2] = categorical_histograms(gravity_values(c, rmap), gravity_values(c2, rmap), 1e-12);
  CHECK(jsd(g1, g2) == 0.0);
}

TEST_CASE("connectivity") {
  const RoadNetwork net = generate_grid_network(testing::small_world(4));
  const Corpus c = simulate_corpus(net, testing::small_world(4, 10));
  const ConnectivityMatrix rcm = build_rcm(c, static_cast<int>(net.num_links()));
  CHECK(connectivity(c, rcm) == 1.0);
  Corpus bad = c;
  bad[3].push_back(bad[3].back());  // a link never follows itself
  CHECK(connectivity(bad, rcm) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(connectivity(Corpus{Trajectory{5}}, rcm) == 1.0);
}

TEST_CASE("markov chain fits count ratios") {
  // 0->1->2, 0->1, 1->2
  const Corpus toy{{0, 1, 2}, {0, 1}, {1, 2}};
  const MarkovChain mc(toy, 3);
  CHECK(mc.start_probability(0) == doctest::Approx(2.0 / 3.0));
  CHECK(mc.start_probability(1) == doctest::Approx(1.0 / 3.0));
  CHECK(mc.start_probability(2) == 0.0);
  CHECK(mc.transition(0, 1) == 1.0);
  CHECK(mc.transition(1, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(mc.transition(1, mc.end_state()) == doctest::Approx(1.0 / 3.0));
  CHECK(mc.transition(2, mc.end_state()) == 1.0);
  CHECK(mc.transition(0, 2) == 0.0);

  const RoadNetwork net = generate_grid_network(testing::small_world(4));
  const Corpus c = simulate_corpus(net, testing::small_world(4, 200));
  const MarkovChain m(c, static_cast<int>(net.num_links()));
  for (int l = 0; l < m.num_links(); ++l) {
    double s = 0.0;
    for (int k = 0; k <= m.end_state(); ++k) s += m.transition(l, k);
    REQUIRE((s == 0.0 || std::abs(s - 1.0) < 1e-12));
  }
  const ConnectivityMatrix rcm = build_rcm(c, static_cast<int>(net.num_links()));
  const Corpus syn = mmc_baseline(c, m.num_links(), 300, 4);
  CHECK(syn.size() == 300);
  CHECK(connectivity(syn, rcm) == 1.0);
  CHECK(mmc_baseline(c, m.num_links(), 50, 4) == Corpus(syn.begin(), syn.begin() + 50));
}

TEST_CASE("random walk baseline") {
  const RoadNetwork net = generate_grid_network(testing::small_world(4));
  const Corpus c = simulate_corpus(net, testing::small_world(4, 200));
  const Corpus rw = random_walk_baseline(net, c, 4000, 9);
  CHECK(rw == random_walk_baseline(net, c, 4000, 9));
  std::vector<double> visits(net.num_links(), 0.0), starts(net.num_links(), 0.0);
  double total = 0.0;
  std::set<std::size_t> lengths;
  for (const auto& t : c) {
    lengths.insert(t.size());
    for (LinkId l : t) {
      visits[static_cast<std::size_t>(l)] += 1.0;
      total += 1.0;
    }
  }
  for (const auto& t : rw) {
    REQUIRE(lengths.count(t.size()) == 1);
    for (std::size_t i = 1; i < t.size(); ++i) REQUIRE(net.adjacent(t[i - 1], t[i]));
    starts[static_cast<std::size_t>(t.front())] += 1.0;
  }
  double l1 = 0.0;
  for (std::size_t i = 0; i < visits.size(); ++i) l1 += std::abs(starts[i] / 4000.0 - visits[i] / total);
  CHECK(l1 < 0.15);
}

TEST_CASE("report") {
  const WorldConfig w = testing::small_world(5, 300);
  const RoadNetwork net = generate_grid_network(w);
  const Corpus c = simulate_corpus(net, w);
  const RegionMap rmap = build_region_map(net, 4, 4);
  const ConnectivityMatrix rcm = build_rcm(c, static_cast<int>(net.num_links()));
  EvalConfig cfg;
  cfg.grid_width = cfg.grid_height = 4;
  const MetricsReport same = report(c, c, net, rmap, rcm, cfg, false);
  REQUIRE(same.rows.size() == 1);
  const MetricRow& r = same.rows[0];
  CHECK(r.query_error == 0.0);
  CHECK(r.jsd_od == 0.0);
  CHECK(r.jsd_trip_length == 0.0);
  CHECK(r.jsd_radius == 0.0);
  CHECK(r.jsd_gravity == 0.0);
  CHECK(r.connectivity == 1.0);

  Rng rng = make_rng(7, "test.report");
  for (int trial = 0; trial < 5; ++trial) {
    const Corpus syn = random_corpus(rng, 50 + static_cast<int>(uniform_index(rng, 100)), static_cast<int>(net.num_links()), 10);
    const MetricsReport rep = report(c, syn, net, rmap, rcm, cfg, true);
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[1].name == "random_walk");
    CHECK(rep.rows[2].name == "mmc");
    for (const auto& row : rep.rows) {
      for (double v : {row.jsd_od, row.jsd_trip_length, row.jsd_radius, row.jsd_gravity, row.connectivity}) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
    std::ostringstream a, b;
    write_report_json(a, rep);
    write_report_json(b, report(c, syn, net, rmap, rcm, cfg, true));
    REQUIRE(a.str() == b.str());
  }
}

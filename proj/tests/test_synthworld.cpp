#include <limits>
#include <map>
#include <queue>

#include "doctest.h"
#include "support.hpp"
#include "trajgen/synthworld.hpp"

using namespace trajgen;

namespace {

// Bellman-Ford over links, independent of the library's Dijkstra.
std::vector<double> bellman_ford_from(const RoadNetwork& net, NodeId src) {
  std::vector<double> d(net.num_nodes(), std::numeric_limits<double>::infinity());
  d[static_cast<std::size_t>(src)] = 0.0;
  for (std::size_t it = 0; it < net.num_nodes(); ++it) {
    for (const auto& l : net.links()) {
      const double via = d[static_cast<std::size_t>(l.from)] + l.length;
      if (via < d[static_cast<std::size_t>(l.to)]) d[static_cast<std::size_t>(l.to)] = via;
    }
  }
  return d;
}

}  // namespace

TEST_CASE("grid link counts") {
  WorldConfig w;
  w.width = w.height = 2;
  CHECK(generate_grid_network(w).num_links() == 8);
  w.width = w.height = 10;
  const RoadNetwork net = generate_grid_network(w);
  CHECK(net.num_links() == 360);
  CHECK(net.num_nodes() == 100);
  w.width = 3;
  w.height = 5;
  CHECK(generate_grid_network(w).num_links() == 2 * (3 * 4 + 5 * 2));

  std::map<std::pair<NodeId, NodeId>, int> seen;
  for (const auto& l : net.links()) {
    ++seen[{l.from, l.to}];
    CHECK(l.length == 100.0);
  }
  for (const auto& [k, n] : seen) {
    REQUIRE(n == 1);
    REQUIRE(seen.count({k.second, k.first}) == 1);
  }
}

TEST_CASE("distances match an independent shortest-path oracle") {
  WorldConfig w = testing::small_world(5);
  const RoadNetwork net = generate_grid_network(w);
  for (NodeId t : {0, 7, 24}) {
    const auto d = distances_to(net, t);
    for (NodeId s = 0; s < static_cast<NodeId>(net.num_nodes()); ++s) {
      REQUIRE(d[static_cast<std::size_t>(s)] == bellman_ford_from(net, s)[static_cast<std::size_t>(t)]);
    }
  }
}

TEST_CASE("without detours every trajectory is a shortest path") {
  WorldConfig w = testing::small_world(6, 400);
  w.detour_prob = 0.0;
  w.min_links = 5;
  const RoadNetwork net = generate_grid_network(w);
  const Corpus c = simulate_corpus(net, w);
  REQUIRE(c.size() == 400);
  std::map<NodeId, std::vector<double>> cache;
  for (const auto& t : c) {
    const NodeId o = net.link(t.front()).from, d = net.link(t.back()).to;
    if (!cache.count(o)) cache[o] = bellman_ford_from(net, o);
    double len = 0.0;
    for (LinkId l : t) len += net.link(l).length;
    REQUIRE(len == cache[o][static_cast<std::size_t>(d)]);
  }
}

TEST_CASE("corpus invariants") {
  const WorldConfig w;  // 10x10, 5000 trajectories
  const RoadNetwork net = generate_grid_network(w);
  const Corpus c = simulate_corpus(net, w);
  CHECK(c.size() == 5000);
  std::size_t detoured = 0;
  for (const auto& t : c) {
    REQUIRE(t.size() >= 5);
    for (std::size_t i = 1; i < t.size(); ++i) REQUIRE(net.adjacent(t[i - 1], t[i]));
    double len = 0.0;
    for (LinkId l : t) len += net.link(l).length;
    const auto d = distances_to(net, net.link(t.back()).to);
    detoured += len > d[static_cast<std::size_t>(net.link(t.front()).from)];
  }
  CHECK(detoured > 0);
  CHECK(simulate_corpus(net, w) == c);
  WorldConfig other = w;
  other.seed = 2;
  CHECK(simulate_corpus(net, other) != c);
}

TEST_CASE("planted od law") {
  const WorldConfig w = testing::small_world(4);
  const RoadNetwork net = generate_grid_network(w);
  const auto pop = node_popularity(w, net.num_nodes());
  const auto od = planted_od_weights(net, w);
  const std::size_t n = net.num_nodes();
  REQUIRE(od.size() == n * n);
  for (std::size_t o = 0; o < n; ++o) {
    REQUIRE(od[o * n + o] == 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      if (t == o) continue;
      const double dx = net.nodes()[o].x - net.nodes()[t].x, dy = net.nodes()[o].y - net.nodes()[t].y;
      REQUIRE(testing::rel_error(od[o * n + t], pop[o] * pop[t] / (dx * dx + dy * dy)) < 1e-12);
    }
  }
}

TEST_CASE("world config validation") {
  WorldConfig w;
  w.width = 1;
  CHECK_THROWS_WITH_AS(w.validate(), doctest::Contains("width"), ConfigError);
  w = WorldConfig{};
  w.detour_prob = 1.5;
  CHECK_THROWS_WITH_AS(w.validate(), doctest::Contains("detour_prob"), ConfigError);
  w = WorldConfig{};
  w.num_trajectories = 0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

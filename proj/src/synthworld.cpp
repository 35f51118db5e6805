#include "trajgen/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include "trajgen/rng.hpp"

namespace trajgen {

void WorldConfig::validate() const {
  if (width < 2) throw ConfigError("world.width must be >= 2");
  if (height < 2) throw ConfigError("world.height must be >= 2");
  if (!(link_length > 0.0)) throw ConfigError("world.link_length must be > 0");
  if (num_trajectories < 1) throw ConfigError("world.num_trajectories must be >= 1");
  if (!(detour_prob >= 0.0 && detour_prob <= 0.5)) throw ConfigError("world.detour_prob must be in [0, 0.5]");
  if (!(gravity_exponent >= 0.0)) throw ConfigError("world.gravity_exponent must be >= 0");
  if (min_links < 1) throw ConfigError("world.min_links must be >= 1");
}

RoadNetwork generate_grid_network(const WorldConfig& cfg) {
  cfg.validate();
  std::vector<RoadNode> nodes;
  nodes.reserve(static_cast<std::size_t>(cfg.width * cfg.height));
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) nodes.push_back({x * cfg.link_length, y * cfg.link_length});
  }
  auto id = [&](int x, int y) { return static_cast<NodeId>(y * cfg.width + x); };
  std::vector<RoadLink> links;
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      if (x + 1 < cfg.width) {
        links.push_back({id(x, y), id(x + 1, y), cfg.link_length});
        links.push_back({id(x + 1, y), id(x, y), cfg.link_length});
      }
      if (y + 1 < cfg.height) {
        links.push_back({id(x, y), id(x, y + 1), cfg.link_length});
        links.push_back({id(x, y + 1), id(x, y), cfg.link_length});
      }
    }
  }
  return RoadNetwork(std::move(nodes), std::move(links));
}

std::vector<double> node_popularity(const WorldConfig& cfg, std::size_t num_nodes) {
  Rng rng = make_rng(cfg.seed, "world.popularity");
  std::lognormal_distribution<double> dist(0.0, 0.5);
  std::vector<double> pop(num_nodes);
  for (auto& p : pop) p = dist(rng);
  return pop;
}

std::vector<double> planted_od_weights(const RoadNetwork& network, const WorldConfig& cfg) {
  const std::size_t n = network.num_nodes();
  const auto pop = node_popularity(cfg, n);
  std::vector<double> w(n * n, 0.0);
  for (std::size_t o = 0; o < n; ++o) {
    for (std::size_t d = 0; d < n; ++d) {
      if (o == d) continue;
      const auto& a = network.nodes()[o];
      const auto& b = network.nodes()[d];
      const double dist = std::hypot(a.x - b.x, a.y - b.y);
      w[o * n + d] = pop[o] * pop[d] / std::pow(dist, cfg.gravity_exponent);
    }
  }
  return w;
}

std::vector<double> distances_to(const RoadNetwork& network, NodeId target) {
  const std::size_t n = network.num_nodes();
  std::vector<std::vector<LinkId>> in_links(n);
  for (std::size_t i = 0; i < network.num_links(); ++i) {
    in_links[static_cast<std::size_t>(network.links()[i].to)].push_back(static_cast<LinkId>(i));
  }
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  using Entry = std::pair<double, NodeId>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  dist[static_cast<std::size_t>(target)] = 0.0;
  heap.push({0.0, target});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    for (LinkId l : in_links[static_cast<std::size_t>(u)]) {
      const auto& link = network.link(l);
      const double nd = d + link.length;
      if (nd < dist[static_cast<std::size_t>(link.from)]) {
        dist[static_cast<std::size_t>(link.from)] = nd;
        heap.push({nd, link.from});
      }
    }
  }
  return dist;
}

namespace {

// Links out of `u` that lie on some shortest path to the target.
std::vector<LinkId> shortest_moves(const RoadNetwork& net, const std::vector<double>& dist, NodeId u) {
  std::vector<LinkId> moves;
  const double du = dist[static_cast<std::size_t>(u)];
  for (LinkId l : net.out_links(u)) {
    const auto& link = net.link(l);
    const double via = link.length + dist[static_cast<std::size_t>(link.to)];
    if (std::abs(via - du) <= 1e-9 * std::max(1.0, du)) moves.push_back(l);
  }
  return moves;
}

bool is_reverse(const RoadNetwork& net, LinkId a, LinkId b) {
  return net.link(a).from == net.link(b).to && net.link(a).to == net.link(b).from;
}

// One route attempt; returns an empty trajectory when the walk is abandoned.
Trajectory route(const RoadNetwork& net, NodeId origin, NodeId dest, double detour_prob, Rng& rng) {
  const auto dist = distances_to(net, dest);
  if (!std::isfinite(dist[static_cast<std::size_t>(origin)])) return {};
  const double shortest = dist[static_cast<std::size_t>(origin)];
  double min_len = std::numeric_limits<double>::infinity();
  for (const auto& l : net.links()) min_len = std::min(min_len, l.length);
  const auto max_steps = static_cast<std::size_t>(4.0 * shortest / min_len) + 16;

  Trajectory t;
  NodeId u = origin;
  while (u != dest) {
    if (t.size() > max_steps) return {};
    LinkId next = -1;
    if (detour_prob > 0.0 && uniform01(rng) < detour_prob) {
      std::vector<LinkId> options;
      for (LinkId l : net.out_links(u)) {
        if (t.empty() || !is_reverse(net, l, t.back())) options.push_back(l);
      }
      if (!options.empty()) next = options[uniform_index(rng, options.size())];
    }
    if (next < 0) {
      const auto moves = shortest_moves(net, dist, u);
      if (moves.empty()) return {};
      next = moves[uniform_index(rng, moves.size())];
    }
    t.push_back(next);
    u = net.link(next).to;
  }
  return t;
}

}  // namespace

Corpus simulate_corpus(const RoadNetwork& network, const WorldConfig& cfg) {
  cfg.validate();
  const std::size_t n = network.num_nodes();
  const auto od = planted_od_weights(network, cfg);
  const CategoricalSampler od_sampler(od);
  constexpr int kMaxRetries = 100000;

  Corpus corpus;
  corpus.reserve(static_cast<std::size_t>(cfg.num_trajectories));
  for (int i = 0; i < cfg.num_trajectories; ++i) {
    Rng rng = make_rng(cfg.seed, "world.trajectory", static_cast<std::uint64_t>(i));
    Trajectory t;
    int attempts = 0;
    while (t.size() < static_cast<std::size_t>(cfg.min_links)) {
      if (++attempts > kMaxRetries) {
        throw std::runtime_error("simulate_corpus: no trajectory of the minimum length could be drawn");
      }
      const std::size_t pair = od_sampler.sample(rng);
      t = route(network, static_cast<NodeId>(pair / n), static_cast<NodeId>(pair % n), cfg.detour_prob, rng);
    }
    corpus.push_back(std::move(t));
  }
  return corpus;
}

}  // namespace trajgen

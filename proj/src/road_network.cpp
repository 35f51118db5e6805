#include "trajgen/road_network.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "trajgen/hash.hpp"

namespace trajgen {

RoadNetwork::RoadNetwork(std::vector<RoadNode> nodes, std::vector<RoadLink> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
  const auto n = static_cast<NodeId>(nodes_.size());
  std::vector<std::size_t> degree(nodes_.size() + 1, 0);
  centroids_.reserve(links_.size());
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const auto& l = links_[i];
    if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n) {
      throw FormatError("link " + std::to_string(i) + " references a missing node");
    }
    if (!(l.length > 0.0) || !std::isfinite(l.length)) {
      throw FormatError("link " + std::to_string(i) + " has non-positive length");
    }
    const auto& a = nodes_[static_cast<std::size_t>(l.from)];
    const auto& b = nodes_[static_cast<std::size_t>(l.to)];
    centroids_.push_back({0.5 * (a.x + b.x), 0.5 * (a.y + b.y)});
    ++degree[static_cast<std::size_t>(l.from) + 1];
  }
  out_offsets_.assign(nodes_.size() + 1, 0);
  for (std::size_t i = 1; i <= nodes_.size(); ++i) out_offsets_[i] = out_offsets_[i - 1] + degree[i];
  out_links_.assign(links_.size(), 0);
  std::vector<std::size_t> fill(out_offsets_.begin(), out_offsets_.end() - 1);
  for (std::size_t i = 0; i < links_.size(); ++i) {
    out_links_[fill[static_cast<std::size_t>(links_[i].from)]++] = static_cast<LinkId>(i);
  }
}

std::span<const LinkId> RoadNetwork::out_links(NodeId node) const {
  const auto i = static_cast<std::size_t>(node);
  return {out_links_.data() + out_offsets_.at(i), out_offsets_.at(i + 1) - out_offsets_.at(i)};
}

std::uint64_t RoadNetwork::content_hash() const {
  Fnv1a h;
  h.update_pod(static_cast<std::uint64_t>(nodes_.size()));
  h.update_pod(static_cast<std::uint64_t>(links_.size()));
  for (const auto& n : nodes_) {
    h.update_pod(n.x);
    h.update_pod(n.y);
  }
  for (const auto& l : links_) {
    h.update_pod(l.from);
    h.update_pod(l.to);
    h.update_pod(l.length);
  }
  return h.digest();
}

Point equirectangular(double lon, double lat, double lon0, double lat0) {
  constexpr double kEarthRadius = 6371008.8;
  constexpr double kDeg = std::numbers::pi / 180.0;
  return {kEarthRadius * (lon - lon0) * kDeg * std::cos(lat0 * kDeg),
          kEarthRadius * (lat - lat0) * kDeg};
}

namespace {

bool next_record(std::istream& in, std::string& line, std::size_t& lineno) {
  while (std::getline(in, line)) {
    ++lineno;
    auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos || line[pos] == '#') continue;
    return true;
  }
  return false;
}

[[noreturn]] void bad_line(std::size_t lineno, const std::string& why) {
  throw FormatError("network line " + std::to_string(lineno) + ": " + why);
}

}  // namespace

RoadNetwork read_network(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!next_record(in, line, lineno)) throw FormatError("network file is empty");
  std::istringstream header(line);
  std::string magic, crs = "planar";
  int version = 0;
  long long num_nodes = -1, num_links = -1;
  header >> magic >> version >> num_nodes >> num_links;
  if (magic != "ROADNET" || !header) bad_line(lineno, "expected 'ROADNET <version> <nodes> <links>' header");
  header >> crs;
  if (version != kNetworkFormatVersion) {
    bad_line(lineno, "unsupported format version " + std::to_string(version));
  }
  if (crs != "planar" && crs != "lonlat") bad_line(lineno, "unknown coordinate system '" + crs + "'");
  if (num_nodes < 0 || num_links < 0) bad_line(lineno, "negative counts");

  std::vector<RoadNode> nodes(static_cast<std::size_t>(num_nodes));
  std::vector<RoadLink> links(static_cast<std::size_t>(num_links));
  for (long long i = 0; i < num_nodes; ++i) {
    if (!next_record(in, line, lineno)) throw FormatError("network file truncated in node records");
    std::istringstream rec(line);
    std::string tag;
    long long id = -1;
    RoadNode n;
    rec >> tag >> id >> n.x >> n.y;
    if (tag != "N" || !rec) bad_line(lineno, "malformed node record");
    if (id != i) bad_line(lineno, "node ids must be dense and ordered");
    nodes[static_cast<std::size_t>(i)] = n;
  }
  for (long long i = 0; i < num_links; ++i) {
    if (!next_record(in, line, lineno)) throw FormatError("network file truncated in link records");
    std::istringstream rec(line);
    std::string tag;
    long long id = -1;
    RoadLink l;
    rec >> tag >> id >> l.from >> l.to >> l.length;
    if (tag != "L" || !rec) bad_line(lineno, "malformed link record");
    if (id != i) bad_line(lineno, "link ids must be dense and ordered");
    links[static_cast<std::size_t>(i)] = l;
  }
  if (next_record(in, line, lineno)) bad_line(lineno, "trailing record after declared counts");

  if (crs == "lonlat" && !nodes.empty()) {
    double lon0 = 0.0, lat0 = 0.0;
    for (const auto& n : nodes) {
      lon0 += n.x;
      lat0 += n.y;
    }
    lon0 /= static_cast<double>(nodes.size());
    lat0 /= static_cast<double>(nodes.size());
    for (auto& n : nodes) {
      auto p = equirectangular(n.x, n.y, lon0, lat0);
      n.x = p.x;
      n.y = p.y;
    }
  }
  return RoadNetwork(std::move(nodes), std::move(links));
}

RoadNetwork read_network_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open network file '" + path + "'");
  return read_network(in);
}

void write_network(std::ostream& out, const RoadNetwork& network,
                   std::span<const std::string> comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "ROADNET " << kNetworkFormatVersion << ' ' << network.num_nodes() << ' '
      << network.num_links() << " planar\n";
  char buf[128];
  for (std::size_t i = 0; i < network.num_nodes(); ++i) {
    const auto& n = network.nodes()[i];
    std::snprintf(buf, sizeof(buf), "N %zu %.17g %.17g\n", i, n.x, n.y);
    out << buf;
  }
  for (std::size_t i = 0; i < network.num_links(); ++i) {
    const auto& l = network.links()[i];
    std::snprintf(buf, sizeof(buf), "L %zu %d %d %.17g\n", i, l.from, l.to, l.length);
    out << buf;
  }
}

void write_network_file(const std::string& path, const RoadNetwork& network,
                        std::span<const std::string> comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write network file '" + path + "'");
  write_network(out, network, comments);
}

}  // namespace trajgen

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "trajgen/common.hpp"

namespace trajgen {

struct RoadNode {
  double x = 0.0;  // meters
  double y = 0.0;  // meters
};

struct RoadLink {
  NodeId from = 0;
  NodeId to = 0;
  double length = 0.0;  // meters
};

// Directed road graph. Link ids are dense 0..L-1; a street and its reverse
// are distinct links.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  RoadNetwork(std::vector<RoadNode> nodes, std::vector<RoadLink> links);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_links() const { return links_.size(); }
  bool empty() const { return links_.empty(); }

  const RoadNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const RoadLink& link(LinkId id) const { return links_.at(static_cast<std::size_t>(id)); }
  const std::vector<RoadNode>& nodes() const { return nodes_; }
  const std::vector<RoadLink>& links() const { return links_; }

  // Segment midpoint.
  Point centroid(LinkId id) const { return centroids_.at(static_cast<std::size_t>(id)); }

  std::span<const LinkId> out_links(NodeId node) const;
  // Links that can directly follow `link` (those leaving its head node).
  std::span<const LinkId> successors(LinkId link) const { return out_links(this->link(link).to); }
  bool adjacent(LinkId a, LinkId b) const { return link(a).to == link(b).from; }
  bool valid_link(LinkId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < links_.size();
  }

  // Stable content hash over geometry and topology.
  std::uint64_t content_hash() const;

 private:
  std::vector<RoadNode> nodes_;
  std::vector<RoadLink> links_;
  std::vector<Point> centroids_;
  std::vector<std::size_t> out_offsets_;
  std::vector<LinkId> out_links_;
};

// Local equirectangular projection around (lon0, lat0), in meters.
Point equirectangular(double lon, double lat, double lon0, double lat0);

// Network file:
//   # free-form comment lines
//   ROADNET <version> <num_nodes> <num_links> <planar|lonlat>
//   N <id> <x> <y>            (num_nodes records, ids 0..num_nodes-1 in order)
//   L <id> <from> <to> <len>  (num_links records, ids 0..num_links-1 in order)
// lonlat networks carry degrees in x/y and are projected on load.
inline constexpr int kNetworkFormatVersion = 1;

RoadNetwork read_network(std::istream& in);
RoadNetwork read_network_file(const std::string& path);
void write_network(std::ostream& out, const RoadNetwork& network,
                   std::span<const std::string> comments = {});
void write_network_file(const std::string& path, const RoadNetwork& network,
                        std::span<const std::string> comments = {});

}  // namespace trajgen

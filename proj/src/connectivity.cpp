#include "trajgen/connectivity.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace trajgen {

ConnectivityMatrix::ConnectivityMatrix(int num_links, bool bot_token)
    : num_links_(num_links), bot_token_(bot_token) {
  if (num_links < 0) throw std::invalid_argument("negative link count");
  rows_.resize(static_cast<std::size_t>(num_links));
  all_row_.resize(static_cast<std::size_t>(vocab_size()));
  for (int t = 0; t < vocab_size(); ++t) all_row_[static_cast<std::size_t>(t)] = t;
  for (int t = 0; t <= num_links; ++t) bot_row_.push_back(t);
  finalize();
}

void ConnectivityMatrix::allow(LinkId from, LinkId to) {
  if (from < 0 || from >= num_links_ || to < 0 || to >= num_links_) {
    throw std::out_of_range("connectivity pair (" + std::to_string(from) + ", " +
                            std::to_string(to) + ") outside vocabulary");
  }
  rows_[static_cast<std::size_t>(from)].push_back(to);
}

void ConnectivityMatrix::finalize() {
  pair_count_ = 0;
  for (auto& row : rows_) {
    std::erase(row, eot());
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    pair_count_ += row.size();
    row.push_back(eot());  // <EOT> column is always allowed
  }
}

bool ConnectivityMatrix::allowed(Token from, Token to) const {
  if (from < 0 || from >= vocab_size() || to < 0 || to >= vocab_size()) return false;
  if (from == eot()) return true;
  if (bot_token_ && to == bot()) return false;
  if (to == eot()) return true;
  if (bot_token_ && from == bot()) return true;
  const auto& row = rows_[static_cast<std::size_t>(from)];
  return std::binary_search(row.begin(), row.end(), to);
}

std::span<const Token> ConnectivityMatrix::successors(Token from) const {
  if (from == eot()) return all_row_;
  if (bot_token_ && from == bot()) return bot_row_;
  return rows_.at(static_cast<std::size_t>(from));
}

ConnectivityMatrix build_rcm(std::span<const Trajectory> corpus, int num_links,
                             const RcmOptions& options, const RoadNetwork* network) {
  ConnectivityMatrix rcm(num_links, options.bot_token);
  for (const auto& t : corpus) {
    for (std::size_t i = 0; i + 1 < t.size(); ++i) rcm.allow(t[i], t[i + 1]);
  }
  if (options.union_graph_adjacency) {
    if (network == nullptr) throw std::invalid_argument("graph adjacency union needs a network");
    if (static_cast<int>(network->num_links()) != num_links) {
      throw std::invalid_argument("network link count does not match vocabulary");
    }
    for (LinkId a = 0; a < num_links; ++a) {
      for (LinkId b : network->successors(a)) rcm.allow(a, b);
    }
  }
  rcm.finalize();
  return rcm;
}

}  // namespace trajgen

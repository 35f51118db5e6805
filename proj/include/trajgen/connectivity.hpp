#pragma once

#include <span>
#include <vector>

#include "trajgen/common.hpp"
#include "trajgen/road_network.hpp"

namespace trajgen {

struct RcmOptions {
  // Also allow every graph-adjacent pair of the network.
  bool union_graph_adjacency = false;
  // Vocabulary carries a <BOT> token after <EOT>.
  bool bot_token = false;
};

// Binary road connectivity matrix over the token vocabulary (links, <EOT>,
// optionally <BOT>). Stored as sorted per-row successor lists. The <EOT> row
// and column are all ones. <BOT> may follow only <EOT> and may precede any
// link or <EOT>.
class ConnectivityMatrix {
 public:
  ConnectivityMatrix() = default;
  ConnectivityMatrix(int num_links, bool bot_token);

  int num_links() const { return num_links_; }
  int vocab_size() const { return num_links_ + 1 + (bot_token_ ? 1 : 0); }
  Token eot() const { return num_links_; }
  bool has_bot() const { return bot_token_; }
  Token bot() const { return num_links_ + 1; }

  bool allowed(Token from, Token to) const;
  std::span<const Token> successors(Token from) const;

  // Observed link-to-link pairs (excluding boundary tokens).
  std::size_t link_pair_count() const { return pair_count_; }

  // Adds a link-to-link transition. Rows must be finalized afterwards.
  void allow(LinkId from, LinkId to);
  void finalize();

 private:
  int num_links_ = 0;
  bool bot_token_ = false;
  std::size_t pair_count_ = 0;
  std::vector<std::vector<Token>> rows_;  // link rows, including <EOT>
  std::vector<Token> all_row_;            // <EOT> row
  std::vector<Token> bot_row_;            // <BOT> row
};

ConnectivityMatrix build_rcm(std::span<const Trajectory> corpus, int num_links,
                             const RcmOptions& options = {},
                             const RoadNetwork* network = nullptr);

}  // namespace trajgen

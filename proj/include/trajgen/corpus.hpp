#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajgen/common.hpp"

namespace trajgen {

enum class BoundaryMode { eot_only, bot_and_eot };

std::string to_string(BoundaryMode mode);
BoundaryMode parse_boundary_mode(const std::string& text);

// Token t < L is link t; token L is <EOT>; under bot_and_eot token L+1 is <BOT>.
class Vocab {
 public:
  Vocab(int num_links, BoundaryMode mode);

  int num_links() const { return num_links_; }
  int size() const { return num_links_ + (mode_ == BoundaryMode::bot_and_eot ? 2 : 1); }
  Token eot() const { return num_links_; }
  Token bot() const;
  BoundaryMode mode() const { return mode_; }
  bool is_link(Token t) const { return t >= 0 && t < num_links_; }
  // Token that opens every training block and every unconditional generation.
  Token start_token() const { return mode_ == BoundaryMode::bot_and_eot ? bot() : eot(); }

 private:
  int num_links_;
  BoundaryMode mode_;
};

TokenSeq encode(std::span<const LinkId> traj, const Vocab& vocab);
// Strips boundary tokens and truncates at the first <EOT>.
Trajectory decode(std::span<const Token> tokens, const Vocab& vocab);

std::pair<Corpus, Corpus> split(const Corpus& corpus, double train_frac, std::uint64_t seed);

// Concatenation of encoded trajectories.
struct PackedStream {
  TokenSeq tokens;
  std::vector<std::size_t> starts;   // offset of each trajectory's first token
  std::vector<std::size_t> lengths;  // encoded length of each trajectory
  int block_size = 0;
  std::size_t truncated = 0;  // trajectories clipped to fit block_size
};

// Trajectories longer than block_size - 1 links are clipped to block_size - 1
// links before encoding.
PackedStream pack(const Corpus& corpus, const Vocab& vocab, int block_size);

// Fixed-shape batch of next-token pairs. weights[i] == 0 marks padding.
struct TokenBatch {
  int rows = 0;
  int cols = 0;
  TokenSeq inputs;
  TokenSeq targets;
  std::vector<double> weights;
};

// Raw shift-by-one windows: inputs = stream[p, p+block), targets = stream[p+1, p+block+1).
TokenBatch next_token_batch(const PackedStream& stream, std::span<const std::size_t> positions);

// One block per trajectory, opened by the start token:
//   eot_only     -> inputs [EOT, l1..ln],      targets [l1..ln, EOT]
//   bot_and_eot  -> inputs [BOT, l1..ln],      targets [l1..ln, EOT]
// Blocks are right-padded with <EOT> to the longest block in the batch;
// padded targets carry weight 0.
TokenBatch trajectory_batch(const PackedStream& stream, const Vocab& vocab,
                            std::span<const std::size_t> trajectory_indices);

// Corpus file: one trajectory per line, whitespace-separated link ids;
// lines starting with '#' are comments.
Corpus read_corpus(std::istream& in);
Corpus read_corpus_file(const std::string& path);
void write_corpus(std::ostream& out, const Corpus& corpus, std::span<const std::string> comments = {});
void write_corpus_file(const std::string& path, const Corpus& corpus,
                       std::span<const std::string> comments = {});

// Sidecar metadata at <corpus>.meta: "key=value" lines. Carries the network
// hash so that a corpus is never paired with the wrong vocabulary.
using Metadata = std::map<std::string, std::string>;
std::string metadata_path(const std::string& corpus_path);
void write_metadata_file(const std::string& path, const Metadata& meta);
Metadata read_metadata_file(const std::string& path);

// Throws FormatError if any link id is outside [0, num_links).
void validate_corpus(const Corpus& corpus, int num_links, const std::string& what);

}  // namespace trajgen

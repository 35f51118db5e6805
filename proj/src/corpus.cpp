#include "trajgen/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "trajgen/rng.hpp"

namespace trajgen {

std::string to_string(BoundaryMode mode) {
  return mode == BoundaryMode::eot_only ? "eot_only" : "bot_and_eot";
}

BoundaryMode parse_boundary_mode(const std::string& text) {
  if (text == "eot_only") return BoundaryMode::eot_only;
  if (text == "bot_and_eot") return BoundaryMode::bot_and_eot;
  throw std::invalid_argument("unknown boundary mode '" + text + "'");
}

Vocab::Vocab(int num_links, BoundaryMode mode) : num_links_(num_links), mode_(mode) {
  if (num_links < 1) throw std::invalid_argument("vocabulary needs at least one link");
}

Token Vocab::bot() const {
  if (mode_ != BoundaryMode::bot_and_eot) throw std::logic_error("vocabulary has no <BOT> token");
  return num_links_ + 1;
}

TokenSeq encode(std::span<const LinkId> traj, const Vocab& vocab) {
  TokenSeq out;
  out.reserve(traj.size() + 2);
  if (vocab.mode() == BoundaryMode::bot_and_eot) out.push_back(vocab.bot());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (!vocab.is_link(traj[i])) {
      throw std::invalid_argument("unknown link id " + std::to_string(traj[i]) + " at index " +
                                  std::to_string(i));
    }
    out.push_back(traj[i]);
  }
  out.push_back(vocab.eot());
  return out;
}

Trajectory decode(std::span<const Token> tokens, const Vocab& vocab) {
  Trajectory out;
  for (Token t : tokens) {
    if (t == vocab.eot()) break;
    if (vocab.is_link(t)) out.push_back(t);
  }
  return out;
}

std::pair<Corpus, Corpus> split(const Corpus& corpus, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("train_frac must be in (0, 1)");
  if (corpus.size() < 2) throw std::invalid_argument("split needs at least 2 trajectories");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with our own index draw keeps the permutation library-independent.
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(corpus.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, corpus.size() - 1);
  Corpus train, test;
  train.reserve(n_train);
  test.reserve(corpus.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? train : test).push_back(corpus[order[i]]);
  return {std::move(train), std::move(test)};
}

PackedStream pack(const Corpus& corpus, const Vocab& vocab, int block_size) {
  if (block_size < 2) throw std::invalid_argument("block_size must be >= 2");
  PackedStream s;
  s.block_size = block_size;
  const auto max_links = static_cast<std::size_t>(block_size - 1);
  for (const auto& t : corpus) {
    if (t.empty()) throw std::invalid_argument("cannot pack an empty trajectory");
    std::span<const LinkId> links(t);
    if (links.size() > max_links) {
      links = links.first(max_links);
      ++s.truncated;
    }
    const auto enc = encode(links, vocab);
    s.starts.push_back(s.tokens.size());
    s.lengths.push_back(enc.size());
    s.tokens.insert(s.tokens.end(), enc.begin(), enc.end());
  }
  return s;
}

TokenBatch next_token_batch(const PackedStream& stream, std::span<const std::size_t> positions) {
  const auto block = static_cast<std::size_t>(stream.block_size);
  TokenBatch b;
  b.rows = static_cast<int>(positions.size());
  b.cols = stream.block_size;
  b.inputs.reserve(positions.size() * block);
  b.targets.reserve(positions.size() * block);
  for (std::size_t p : positions) {
    if (p + block + 1 > stream.tokens.size()) {
      throw std::out_of_range("batch offset " + std::to_string(p) + " out of range");
    }
    b.inputs.insert(b.inputs.end(), stream.tokens.begin() + static_cast<std::ptrdiff_t>(p),
                    stream.tokens.begin() + static_cast<std::ptrdiff_t>(p + block));
    b.targets.insert(b.targets.end(), stream.tokens.begin() + static_cast<std::ptrdiff_t>(p + 1),
                     stream.tokens.begin() + static_cast<std::ptrdiff_t>(p + block + 1));
  }
  b.weights.assign(b.inputs.size(), 1.0);
  return b;
}

TokenBatch trajectory_batch(const PackedStream& stream, const Vocab& vocab,
                            std::span<const std::size_t> trajectory_indices) {
  const bool lead_eot = vocab.mode() == BoundaryMode::eot_only;
  std::size_t cols = 1;
  for (std::size_t i : trajectory_indices) {
    const std::size_t n = stream.lengths.at(i) + (lead_eot ? 1 : 0) - 1;
    cols = std::max(cols, n);
  }
  TokenBatch b;
  b.rows = static_cast<int>(trajectory_indices.size());
  b.cols = static_cast<int>(cols);
  b.inputs.assign(trajectory_indices.size() * cols, vocab.eot());
  b.targets.assign(trajectory_indices.size() * cols, vocab.eot());
  b.weights.assign(trajectory_indices.size() * cols, 0.0);
  for (std::size_t r = 0; r < trajectory_indices.size(); ++r) {
    const std::size_t i = trajectory_indices[r];
    const auto* enc = stream.tokens.data() + stream.starts[i];
    const std::size_t len = stream.lengths[i];
    TokenSeq block;
    block.reserve(len + 1);
    if (lead_eot) block.push_back(vocab.eot());
    block.insert(block.end(), enc, enc + len);
    for (std::size_t c = 0; c + 1 < block.size(); ++c) {
      b.inputs[r * cols + c] = block[c];
      b.targets[r * cols + c] = block[c + 1];
      b.weights[r * cols + c] = 1.0;
    }
  }
  return b;
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos || line[pos] == '#') continue;
    std::istringstream rec(line);
    Trajectory t;
    long long id = 0;
    while (rec >> id) {
      if (id < 0 || id > std::numeric_limits<LinkId>::max()) {
        throw FormatError("corpus line " + std::to_string(lineno) + ": link id out of range");
      }
      t.push_back(static_cast<LinkId>(id));
    }
    if (!rec.eof()) throw FormatError("corpus line " + std::to_string(lineno) + ": non-integer token");
    corpus.push_back(std::move(t));
  }
  return corpus;
}

Corpus read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file '" + path + "'");
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const Corpus& corpus, std::span<const std::string> comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
  for (const auto& t : corpus) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) out << ' ';
      out << t[i];
    }
    out << '\n';
  }
}

void write_corpus_file(const std::string& path, const Corpus& corpus,
                       std::span<const std::string> comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write corpus file '" + path + "'");
  write_corpus(out, corpus, comments);
}

std::string metadata_path(const std::string& corpus_path) { return corpus_path + ".meta"; }

void write_metadata_file(const std::string& path, const Metadata& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write metadata file '" + path + "'");
  for (const auto& [k, v] : meta) out << k << '=' << v << '\n';
}

Metadata read_metadata_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metadata file '" + path + "'");
  Metadata meta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("metadata line without '=' in '" + path + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

void validate_corpus(const Corpus& corpus, int num_links, const std::string& what) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].empty()) throw FormatError(what + ": trajectory " + std::to_string(i) + " is empty");
    for (std::size_t j = 0; j < corpus[i].size(); ++j) {
      if (corpus[i][j] < 0 || corpus[i][j] >= num_links) {
        throw FormatError(what + ": trajectory " + std::to_string(i) + " has unknown link id " +
                          std::to_string(corpus[i][j]) + " at index " + std::to_string(j));
      }
    }
  }
}

}  // namespace trajgen

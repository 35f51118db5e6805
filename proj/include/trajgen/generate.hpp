#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trajgen/connectivity.hpp"
#include "trajgen/corpus.hpp"
#include "trajgen/transformer.hpp"

namespace trajgen {

struct GenerateOptions {
  double temperature = 1.0;  // 0 selects greedy argmax decoding
  int max_len = 63;          // cap on trajectory links, prompt included
  bool rcm_masking = true;
  BoundaryMode mode = BoundaryMode::eot_only;
};

struct Generation {
  Trajectory trajectory;       // prompt followed by generated links
  TokenSeq completion;         // sampled tokens after the prompt, including a final <EOT> if emitted
  bool ended_with_eot = false;
  bool window_truncated = false;  // context slid past block_size
};

// RCM masking of a logits row: entries not allowed after `prev` become -inf.
void apply_rcm_mask(std::span<double> logits, Token prev, const ConnectivityMatrix& rcm);

// Sampling support after `prev`: allowed successors under masking, otherwise
// the whole vocabulary except <BOT>.
std::vector<Token> sampling_support(Token prev, const ConnectivityMatrix* rcm, int vocab_size, bool has_bot);

// Samples a token from softmax(logits / temperature) over `support`; argmax
// when temperature == 0.
Token sample_token(std::span<const double> logits, std::span<const Token> support, double temperature,
                   Rng& rng);

// Autoregressive generation from the start token plus an optional prompt.
// Stops at <EOT> or when the trajectory reaches max_len links.
Generation generate(const TransformerModel& model, const ConnectivityMatrix* rcm, const GenerateOptions& opts,
                    Rng& rng, std::span<const LinkId> prompt = {});

struct CorpusGeneration {
  Corpus corpus;
  std::size_t empty_redraws = 0;
  std::size_t shortfall = 0;           // requested trajectories that exhausted the retry budget
  std::size_t window_truncations = 0;
};

// n independent generations; trajectory i uses sub-seed (seed, i), so output
// is independent of the thread count.
CorpusGeneration generate_corpus(const TransformerModel& model, const ConnectivityMatrix* rcm, int n,
                                 const GenerateOptions& opts, std::uint64_t seed, int threads = 1,
                                 int max_retries = 16);

}  // namespace trajgen

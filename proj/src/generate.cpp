#include "trajgen/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace trajgen {

void apply_rcm_mask(std::span<double> logits, Token prev, const ConnectivityMatrix& rcm) {
  if (static_cast<int>(logits.size()) != rcm.vocab_size()) throw std::invalid_argument("logits row does not match RCM vocabulary");
  const auto allowed = rcm.successors(prev);
  std::size_t k = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (k < allowed.size() && allowed[k] == static_cast<Token>(j)) {
      ++k;
      continue;
    }
    logits[j] = -std::numeric_limits<double>::infinity();
  }
}

std::vector<Token> sampling_support(Token prev, const ConnectivityMatrix* rcm, int vocab_size, bool has_bot) {
  if (rcm) {
    auto s = rcm->successors(prev);
    std::vector<Token> out(s.begin(), s.end());
    if (has_bot) std::erase(out, static_cast<Token>(vocab_size - 1));
    return out;
  }
  std::vector<Token> out(static_cast<std::size_t>(vocab_size - (has_bot ? 1 : 0)));
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<Token>(j);
  return out;
}

Token sample_token(std::span<const double> logits, std::span<const Token> support, double temperature, Rng& rng) {
  if (support.empty()) throw std::logic_error("sampling from an empty support");
  if (temperature < 0.0 || !std::isfinite(temperature)) throw std::invalid_argument("temperature must be >= 0");
  if (temperature == 0.0) {
    Token best = support[0];
    for (Token j : support) {
      if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(best)]) best = j;
    }
    return best;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (Token j : support) m = std::max(m, logits[static_cast<std::size_t>(j)] / temperature);
  std::vector<double> w(support.size());
  double total = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    w[i] = std::exp(logits[static_cast<std::size_t>(support[i])] / temperature - m);
    total += w[i];
  }
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (u < w[i]) return support[i];
    u -= w[i];
  }
  return support.back();
}

Generation generate(const TransformerModel& model, const ConnectivityMatrix* rcm, const GenerateOptions& opts,
                    Rng& rng, std::span<const LinkId> prompt) {
  const auto& cfg = model.config();
  const Vocab vocab(cfg.vocab_size - (opts.mode == BoundaryMode::bot_and_eot ? 2 : 1), opts.mode);
  if (opts.rcm_masking && rcm == nullptr) throw std::invalid_argument("RCM masking requested without an RCM");
  if (rcm && rcm->vocab_size() != cfg.vocab_size) throw std::invalid_argument("RCM and model vocabularies differ");
  if (opts.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (!(opts.temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (prompt.size() + 1 > static_cast<std::size_t>(cfg.block_size)) {
    throw std::invalid_argument("prompt of " + std::to_string(prompt.size()) + " links exceeds block_size");
  }
  const ConnectivityMatrix* mask = opts.rcm_masking ? rcm : nullptr;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (!vocab.is_link(prompt[i])) throw std::invalid_argument("prompt holds an unknown link id");
    if (mask && i > 0 && !mask->allowed(prompt[i - 1], prompt[i])) {
      throw std::invalid_argument("prompt is not RC-consistent at index " + std::to_string(i));
    }
  }
  const bool has_bot = opts.mode == BoundaryMode::bot_and_eot;

  Generation out;
  out.trajectory.assign(prompt.begin(), prompt.end());
  TokenSeq context;
  context.push_back(vocab.start_token());
  context.insert(context.end(), prompt.begin(), prompt.end());

  IncrementalDecoder dec(model);
  Eigen::RowVectorXd logits;
  for (Token t : context) logits = dec.push(t);
  while (out.trajectory.size() < static_cast<std::size_t>(opts.max_len)) {
    const auto support = sampling_support(context.back(), mask, cfg.vocab_size, has_bot);
    const Token next = sample_token({logits.data(), static_cast<std::size_t>(logits.size())}, support,
                                    opts.temperature, rng);
    out.completion.push_back(next);
    if (next == vocab.eot()) {
      out.ended_with_eot = true;
      break;
    }
    out.trajectory.push_back(next);
    context.push_back(next);
    if (out.trajectory.size() >= static_cast<std::size_t>(opts.max_len)) break;
    if (dec.length() == dec.capacity()) {
      // Slide: keep the most recent block_size - 1 tokens.
      out.window_truncated = true;
      dec.reset();
      const std::size_t keep = static_cast<std::size_t>(cfg.block_size - 1);
      for (std::size_t i = context.size() - keep; i < context.size(); ++i) logits = dec.push(context[i]);
    } else {
      logits = dec.push(next);
    }
  }
  return out;
}

CorpusGeneration generate_corpus(const TransformerModel& model, const ConnectivityMatrix* rcm, int n,
                                 const GenerateOptions& opts, std::uint64_t seed, int threads, int max_retries) {
  if (n < 1) throw std::invalid_argument("generate_corpus: n must be >= 1");
  threads = std::max(1, threads);
  struct Slot {
    Trajectory traj;
    std::size_t redraws = 0;
    bool window = false;
    bool failed = false;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < slots.size(); i += step) {
      Rng rng = make_rng(seed, "generate.trajectory", i);
      auto& s = slots[i];
      for (int attempt = 0; attempt <= max_retries; ++attempt) {
        Generation g = generate(model, rcm, opts, rng);
        s.window = s.window || g.window_truncated;
        if (!g.trajectory.empty()) {
          s.traj = std::move(g.trajectory);
          break;
        }
        ++s.redraws;
      }
      s.failed = s.traj.empty();
    }
  };
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t), static_cast<std::size_t>(threads));
    for (auto& th : pool) th.join();
  }
  CorpusGeneration out;
  for (auto& s : slots) {
    out.empty_redraws += s.redraws;
    out.window_truncations += s.window ? 1 : 0;
    if (s.failed) {
      ++out.shortfall;
    } else {
      out.corpus.push_back(std::move(s.traj));
    }
  }
  return out;
}

}  // namespace trajgen

#include "trajgen/rltf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "trajgen/hash.hpp"

namespace trajgen {

namespace {

using json = nlohmann::json;

// Padded next-token batch over whole sequences. Targets at index j >= first[r]
// (relative to the input row) carry weight 1.
TokenBatch sequence_batch(std::span<const TokenSeq> seqs, std::span<const std::size_t> first, Token pad) {
  TokenBatch b;
  b.rows = static_cast<int>(seqs.size());
  std::size_t cols = 1;
  for (const auto& s : seqs) {
    if (s.size() < 2) throw std::invalid_argument("sequence shorter than two tokens");
    cols = std::max(cols, s.size() - 1);
  }
  b.cols = static_cast<int>(cols);
  b.inputs.assign(seqs.size() * cols, pad);
  b.targets.assign(seqs.size() * cols, pad);
  b.weights.assign(seqs.size() * cols, 0.0);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const auto& s = seqs[r];
    for (std::size_t j = 0; j + 1 < s.size(); ++j) {
      b.inputs[r * cols + j] = s[j];
      b.targets[r * cols + j] = s[j + 1];
      if (j >= first[r]) b.weights[r * cols + j] = 1.0;
    }
  }
  return b;
}

TokenSeq clip_to_block(const TokenSeq& seq, int block_size) {
  if (seq.size() <= static_cast<std::size_t>(block_size)) return seq;
  return TokenSeq(seq.end() - block_size, seq.end());
}

void check_optim(const AdamWConfig& o, const char* who) {
  if (!(o.lr > 0.0) || !std::isfinite(o.lr)) throw ConfigError(std::string(who) + ".lr must be > 0");
}

}  // namespace

double traj_length(std::span<const LinkId> traj, const RoadNetwork& net) {
  double total = 0.0;
  for (LinkId l : traj) total += net.link(l).length;
  return total;
}

bool label_pair(const Trajectory& a, double gamma_a, const Trajectory& b, double gamma_b, PreferencePair& out) {
  if (gamma_a == gamma_b) return false;
  const bool a_wins = gamma_a < gamma_b;
  out.chosen = a_wins ? a : b;
  out.rejected = a_wins ? b : a;
  out.gamma_chosen = a_wins ? gamma_a : gamma_b;
  out.gamma_rejected = a_wins ? gamma_b : gamma_a;
  return true;
}

void PreferenceConfig::validate() const {
  if (!(m_frac > 0.0 && m_frac < 1.0)) throw ConfigError("prefs.m_frac must be in (0, 1)");
  if (n_pairs < 1) throw ConfigError("prefs.n_pairs must be >= 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("prefs.temperature must be >= 0");
  if (max_len < 2) throw ConfigError("prefs.max_len must be >= 2");
  if (max_attempts_factor < 1) throw ConfigError("prefs.max_attempts_factor must be >= 1");
}

int prompt_links(std::size_t n, double m_frac) {
  if (n < 2) throw std::invalid_argument("prompt_links: trajectory needs at least 2 links");
  const auto m = static_cast<std::size_t>(std::floor(m_frac * static_cast<double>(n)));
  return static_cast<int>(std::clamp<std::size_t>(m, 1, n - 1));
}

PreferenceDataset build_preference_dataset(const TransformerModel& policy, const ConnectivityMatrix* rcm,
                                           const Corpus& corpus, const RoadNetwork& net, BoundaryMode mode,
                                           const PreferenceConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].size() >= 2) eligible.push_back(i);
  }
  if (eligible.empty()) throw std::invalid_argument("no trajectory with at least 2 links");

  GenerateOptions gen;
  gen.temperature = cfg.temperature;
  gen.max_len = std::min(cfg.max_len, policy.config().block_size - 1);
  gen.rcm_masking = rcm != nullptr;
  gen.mode = mode;

  PreferenceDataset out;
  Rng pick = make_rng(cfg.seed, "prefs.source");
  const auto budget = static_cast<std::size_t>(cfg.n_pairs) * static_cast<std::size_t>(cfg.max_attempts_factor);
  while (out.pairs.size() < static_cast<std::size_t>(cfg.n_pairs) && out.attempts < budget) {
    const std::size_t src = eligible[uniform_index(pick, eligible.size())];
    Rng rng = make_rng(cfg.seed, "prefs.generate", out.attempts);
    ++out.attempts;
    const Trajectory& real = corpus[src];
    const auto m = static_cast<std::size_t>(prompt_links(real.size(), cfg.m_frac));
    const Trajectory prompt(real.begin(), real.begin() + static_cast<std::ptrdiff_t>(m));

    auto complete = [&] {
      Generation g = generate(policy, rcm, gen, rng, prompt);
      return Trajectory(g.trajectory.begin() + static_cast<std::ptrdiff_t>(m), g.trajectory.end());
    };
    const Trajectory a = complete();
    Trajectory b = complete();
    if (a == b) {
      ++out.identical_redraws;
      b = complete();
      if (a == b) {
        ++out.identical_skipped;
        continue;
      }
    }
    const double real_len = traj_length(real, net);
    const double prompt_len = traj_length(prompt, net);
    const double ga = std::abs(real_len - (prompt_len + traj_length(a, net)));
    const double gb = std::abs(real_len - (prompt_len + traj_length(b, net)));
    PreferencePair p;
    if (!label_pair(a, ga, b, gb, p)) {
      ++out.ties;
      continue;
    }
    p.prompt = prompt;
    p.source = src;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

void write_preferences(std::ostream& out, std::span<const PreferencePair> pairs) {
  for (const auto& p : pairs) {
    json j;
    j["source"] = p.source;
    j["prompt"] = p.prompt;
    j["chosen"] = p.chosen;
    j["rejected"] = p.rejected;
    j["gamma_chosen"] = p.gamma_chosen;
    j["gamma_rejected"] = p.gamma_rejected;
    out << j.dump() << '\n';
  }
}

std::vector<PreferencePair> read_preferences(std::istream& in) {
  std::vector<PreferencePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PreferencePair p;
      p.source = j.at("source").get<std::size_t>();
      p.prompt = j.at("prompt").get<Trajectory>();
      p.chosen = j.at("chosen").get<Trajectory>();
      p.rejected = j.at("rejected").get<Trajectory>();
      p.gamma_chosen = j.at("gamma_chosen").get<double>();
      p.gamma_rejected = j.at("gamma_rejected").get<double>();
      if (p.prompt.empty()) throw FormatError("empty prompt");
      if (p.gamma_chosen > p.gamma_rejected) throw FormatError("gamma_chosen > gamma_rejected");
      pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw FormatError("preference line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("preference line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

void write_preferences_file(const std::string& path, std::span<const PreferencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_preferences(out, pairs);
}

std::vector<PreferencePair> read_preferences_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_preferences(in);
}

TokenSeq reward_sequence(std::span<const LinkId> prompt, std::span<const LinkId> completion, const Vocab& vocab) {
  TokenSeq seq;
  seq.reserve(prompt.size() + completion.size() + 2);
  seq.push_back(vocab.start_token());
  for (LinkId l : prompt) seq.push_back(l);
  for (LinkId l : completion) seq.push_back(l);
  seq.push_back(vocab.eot());
  return seq;
}

TransformerModel make_reward_model(const TransformerModel& policy, std::uint64_t seed) {
  ModelConfig cfg = policy.config();
  cfg.head = HeadKind::scalar;
  cfg.seed = seed;
  TransformerModel rm(cfg);
  rm.copy_matching(policy);
  return rm;
}

namespace {

struct ScoreBatch {
  TokenSeq tokens;
  std::vector<int> positions;
  int rows = 0;
  int cols = 0;
};

ScoreBatch score_batch(std::span<const TokenSeq> seqs, const Vocab& vocab, int block_size) {
  ScoreBatch b;
  b.rows = static_cast<int>(seqs.size());
  std::vector<TokenSeq> clipped;
  clipped.reserve(seqs.size());
  std::size_t cols = 1;
  for (const auto& s : seqs) {
    clipped.push_back(clip_to_block(s, block_size));
    cols = std::max(cols, clipped.back().size());
  }
  b.cols = static_cast<int>(cols);
  b.tokens.assign(seqs.size() * cols, vocab.eot());
  for (std::size_t r = 0; r < clipped.size(); ++r) {
    std::copy(clipped[r].begin(), clipped[r].end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(r * cols));
    b.positions.push_back(static_cast<int>(clipped[r].size()) - 1);
  }
  return b;
}

std::vector<TokenSeq> pair_sequences(std::span<const PreferencePair> pairs, const Vocab& vocab) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(2 * pairs.size());
  for (const auto& p : pairs) seqs.push_back(reward_sequence(p.prompt, p.chosen, vocab));
  for (const auto& p : pairs) seqs.push_back(reward_sequence(p.prompt, p.rejected, vocab));
  return seqs;
}

}  // namespace

std::vector<double> reward_scores(const TransformerModel& reward_model, std::span<const TokenSeq> seqs,
                                  const Vocab& vocab) {
  std::vector<double> out;
  out.reserve(seqs.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < seqs.size(); s += kChunk) {
    const auto part = seqs.subspan(s, std::min(kChunk, seqs.size() - s));
    const ScoreBatch b = score_batch(part, vocab, reward_model.config().block_size);
    Tape tape(false);
    const Matrix& v = tape.value(reward_model.scores(tape, b.tokens, b.rows, b.cols, b.positions));
    for (Eigen::Index i = 0; i < v.rows(); ++i) out.push_back(v(i, 0));
  }
  return out;
}

void RewardConfig::validate() const {
  if (epochs < 0) throw ConfigError("reward.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("reward.batch_size must be >= 1");
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw ConfigError("reward.val_frac must be in (0, 1)");
  check_optim(optim, "reward");
}

std::pair<double, double> reward_loss_accuracy(const TransformerModel& reward_model,
                                               std::span<const PreferencePair> pairs, const Vocab& vocab) {
  if (pairs.empty()) throw std::invalid_argument("no preference pairs");
  const auto seqs = pair_sequences(pairs, vocab);
  const auto s = reward_scores(reward_model, seqs, vocab);
  const std::size_t k = pairs.size();
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double z = s[i] - s[k + i];
    loss += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    if (z > 0) ++correct;
  }
  return {loss / static_cast<double>(k), static_cast<double>(correct) / static_cast<double>(k)};
}

RewardResult train_reward_model(TransformerModel& reward_model, std::span<const PreferencePair> pairs,
                                const Vocab& vocab, const RewardConfig& cfg) {
  cfg.validate();
  if (reward_model.config().head != HeadKind::scalar) throw std::invalid_argument("reward model needs a scalar head");
  if (pairs.size() < 2) throw std::invalid_argument("reward training needs at least 2 pairs");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = make_rng(cfg.seed, "reward.split");
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_val = static_cast<std::size_t>(std::llround(cfg.val_frac * static_cast<double>(pairs.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, pairs.size() - 1);
  std::vector<PreferencePair> val, train;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(pairs[order[i]]);

  RewardResult result;
  result.train_pairs = train.size();
  result.val_pairs = val.size();
  AdamW opt(cfg.optim, reward_model.parameters());
  Rng rng = make_rng(cfg.seed, "reward.shuffle");
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<PreferencePair> part;
      for (std::size_t i = s; i < std::min(idx.size(), s + static_cast<std::size_t>(cfg.batch_size)); ++i) {
        part.push_back(train[idx[i]]);
      }
      const auto seqs = pair_sequences(part, vocab);
      const ScoreBatch b = score_batch(seqs, vocab, reward_model.config().block_size);
      Tape tape;
      Var scores = reward_model.scores(tape, b.tokens, b.rows, b.cols, b.positions, true);
      Var loss = ops::pairwise_logistic_loss(tape, scores);
      const double value = tape.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite reward loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      opt.step(reward_model.parameters());
      total += value;
      ++batches;
    }
    const auto [vl, va] = reward_loss_accuracy(reward_model, val, vocab);
    result.trace.push_back({epoch, batches ? total / static_cast<double>(batches) : 0.0, vl, va});
  }
  result.val_accuracy = reward_loss_accuracy(reward_model, val, vocab).second;
  return result;
}

std::vector<double> sequence_logprobs(const TransformerModel& model, const ConnectivityMatrix* rcm,
                                      std::span<const Token> seq, std::size_t first) {
  if (first == 0 || first > seq.size()) throw std::invalid_argument("sequence_logprobs: bad first index");
  if (seq.size() > static_cast<std::size_t>(model.config().block_size) + 1) {
    throw std::invalid_argument("sequence_logprobs: sequence exceeds the context");
  }
  const Matrix logits = model.forward(seq.first(seq.size() - 1));
  const auto v = static_cast<std::size_t>(logits.cols());
  std::vector<double> lsm(v), out;
  for (std::size_t j = first - 1; j + 1 < seq.size(); ++j) {
    const auto sup = rcm ? rcm->successors(seq[j]) : std::span<const Token>{};
    log_softmax_row({logits.row(static_cast<Eigen::Index>(j)).data(), v}, sup, lsm);
    out.push_back(lsm[static_cast<std::size_t>(seq[j + 1])]);
  }
  return out;
}

double ppo_reward(double score, std::span<const double> logp_policy, std::span<const double> logp_base,
                  double beta) {
  if (logp_policy.size() != logp_base.size()) throw std::invalid_argument("ppo_reward: log-prob lengths differ");
  double kl = 0.0;
  for (std::size_t t = 0; t < logp_policy.size(); ++t) kl += logp_policy[t] - logp_base[t];
  return score - beta * kl;
}

double ppo_reward(const TransformerModel& reward_model, const TransformerModel& policy,
                  const TransformerModel& base_policy, const ConnectivityMatrix* rcm,
                  std::span<const LinkId> prompt, std::span<const Token> completion, const Vocab& vocab,
                  double beta) {
  if (completion.empty()) throw std::invalid_argument("ppo_reward: empty completion");
  TokenSeq seq{vocab.start_token()};
  seq.insert(seq.end(), prompt.begin(), prompt.end());
  seq.insert(seq.end(), completion.begin(), completion.end());
  const std::size_t first = 1 + prompt.size();
  const auto lp = sequence_logprobs(policy, rcm, seq, first);
  const auto lb = sequence_logprobs(base_policy, rcm, seq, first);
  const Trajectory links = decode(std::span<const Token>(seq).subspan(1), vocab);
  const TokenSeq rs = reward_sequence(links, {}, vocab);
  const double u = reward_scores(reward_model, std::span<const TokenSeq>(&rs, 1), vocab)[0];
  return ppo_reward(u, lp, lb, beta);
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

void PPOConfig::validate() const {
  if (iterations < 0) throw ConfigError("ppo.iterations must be >= 0");
  if (rollouts < 2) throw ConfigError("ppo.rollouts must be >= 2");
  if (epochs < 1) throw ConfigError("ppo.epochs must be >= 1");
  if (!(beta >= 0.0)) throw ConfigError("ppo.beta must be >= 0");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("ppo.clip_eps must be in (0, 1)");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("ppo.temperature must be >= 0");
  if (!(m_frac > 0.0 && m_frac < 1.0)) throw ConfigError("ppo.m_frac must be in (0, 1)");
  if (max_len < 2) throw ConfigError("ppo.max_len must be >= 2");
  if (!(kl_ceiling > 0.0)) throw ConfigError("ppo.kl_ceiling must be > 0");
  check_optim(optim, "ppo");
}

PPOResult ppo_finetune(TransformerModel& policy, const TransformerModel& base_policy,
                       const TransformerModel& reward_model, const ConnectivityMatrix* rcm, const Corpus& corpus,
                       const Vocab& vocab, const PPOConfig& cfg, const GravitySampler* sampler) {
  cfg.validate();
  if (!policy.config().same_shape(base_policy.config())) throw std::invalid_argument("policy and base differ in shape");
  if (cfg.rcm_masking && rcm == nullptr) throw std::invalid_argument("RCM masking requested without an RCM");
  if (cfg.gravity_prompts && (sampler == nullptr || sampler->size() != corpus.size())) {
    throw std::invalid_argument("gravity prompts need a sampler over the corpus");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].size() >= 2) eligible.push_back(i);
  }
  if (eligible.empty()) throw std::invalid_argument("no trajectory with at least 2 links");
  const ConnectivityMatrix* mask = cfg.rcm_masking ? rcm : nullptr;

  GenerateOptions gen;
  gen.temperature = cfg.temperature;
  gen.max_len = std::min(cfg.max_len, policy.config().block_size - 1);
  gen.rcm_masking = mask != nullptr;
  gen.mode = vocab.mode();

  PPOResult result;
  AdamW opt(cfg.optim, policy.parameters());
  Rng prompt_rng = make_rng(cfg.seed, "ppo.prompts");
  const auto n = static_cast<std::size_t>(cfg.rollouts);
  for (int it = 1; it <= cfg.iterations; ++it) {
    std::vector<std::size_t> sources;
    if (cfg.gravity_prompts) {
      sources = sampler->sample(n, prompt_rng);
      for (auto& s : sources) {
        // Single-link trajectories cannot host a prompt; fall back to uniform.
        if (corpus[s].size() < 2) s = eligible[uniform_index(prompt_rng, eligible.size())];
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) sources.push_back(eligible[uniform_index(prompt_rng, eligible.size())]);
    }

    std::vector<TokenSeq> seqs(n);
    std::vector<std::size_t> first(n);
    std::vector<double> rewards(n), kls(n), scores;
    std::vector<std::vector<double>> old_lp(n);
    std::vector<TokenSeq> scored(n);
    double mean_len = 0.0, token_total = 0.0, kl_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Trajectory& real = corpus[sources[i]];
      const auto m = static_cast<std::size_t>(prompt_links(real.size(), cfg.m_frac));
      const std::span<const LinkId> prompt(real.data(), m);
      Rng rng = make_rng(cfg.seed, "ppo.rollout", static_cast<std::uint64_t>(it - 1) * n + i);
      const Generation g = generate(policy, mask, gen, rng, prompt);
      if (g.completion.empty()) throw std::logic_error("rollout produced no completion tokens");
      TokenSeq& seq = seqs[i];
      seq.push_back(vocab.start_token());
      seq.insert(seq.end(), prompt.begin(), prompt.end());
      seq.insert(seq.end(), g.completion.begin(), g.completion.end());
      first[i] = 1 + m;
      old_lp[i] = sequence_logprobs(policy, mask, seq, first[i]);
      const auto lb = sequence_logprobs(base_policy, mask, seq, first[i]);
      for (std::size_t t = 0; t < lb.size(); ++t) kls[i] += old_lp[i][t] - lb[t];
      kl_total += kls[i];
      token_total += static_cast<double>(lb.size());
      mean_len += static_cast<double>(g.trajectory.size() - m);
      scored[i] = reward_sequence(g.trajectory, {}, vocab);
    }
    scores = reward_scores(reward_model, scored, vocab);
    for (std::size_t i = 0; i < n; ++i) rewards[i] = scores[i] - cfg.beta * kls[i];
    const double kl_per_token = kl_total / token_total;
    if (!std::isfinite(kl_per_token) || kl_per_token > cfg.kl_ceiling) {
      throw NumericalError("KL per token " + std::to_string(kl_per_token) + " exceeds the ceiling at iteration " +
                           std::to_string(it));
    }

    // Whitened sequence reward shared by every completion token.
    const double mean_r = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double r : rewards) var += (r - mean_r) * (r - mean_r);
    const double sd = std::sqrt(var / static_cast<double>(n));
    std::vector<double> adv(n, 0.0);
    if (sd > 1e-12) {
      for (std::size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean_r) / sd;
    }

    std::vector<std::size_t> weighted_from(n);
    for (std::size_t i = 0; i < n; ++i) weighted_from[i] = first[i] - 1;
    const TokenBatch batch = sequence_batch(seqs, weighted_from, vocab.eot());
    const auto cells = batch.inputs.size();
    std::vector<double> old_flat(cells, 0.0), adv_flat(cells, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < old_lp[i].size(); ++t) {
        const std::size_t cell = i * static_cast<std::size_t>(batch.cols) + weighted_from[i] + t;
        old_flat[cell] = old_lp[i][t];
        adv_flat[cell] = adv[i];
      }
    }
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      Tape tape;
      Var logits = policy.logits(tape, batch.inputs, batch.rows, batch.cols, false);
      Var loss = ops::clipped_policy_loss(tape, logits, batch.targets, batch.weights, old_flat, adv_flat,
                                          cfg.clip_eps, mask ? rcm_support(*mask, batch.inputs) : ops::SupportFn{});
      if (!std::isfinite(tape.value(loss)(0, 0))) {
        throw NumericalError("non-finite policy loss at iteration " + std::to_string(it));
      }
      tape.backward(loss);
      opt.step(policy.parameters());
    }
    result.trace.push_back({it, mean_r, std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n),
                            kl_per_token, mean_len / static_cast<double>(n)});
  }
  return result;
}

void SFTConfig::validate() const {
  if (steps < 0) throw ConfigError("sft.steps must be >= 0");
  if (batch_size < 1) throw ConfigError("sft.batch_size must be >= 1");
  check_optim(optim, "sft");
}

std::vector<SFTRecord> sft_finetune(TransformerModel& policy, std::span<const PreferencePair> pairs,
                                    const ConnectivityMatrix* rcm, const Vocab& vocab, const SFTConfig& cfg) {
  cfg.validate();
  if (cfg.rcm_masking && rcm == nullptr) throw std::invalid_argument("RCM masking requested without an RCM");
  if (pairs.empty()) throw std::invalid_argument("SFT needs preference pairs");
  const ConnectivityMatrix* mask = cfg.rcm_masking ? rcm : nullptr;
  std::vector<TokenSeq> seqs;
  std::vector<std::size_t> from;
  for (const auto& p : pairs) {
    TokenSeq s = reward_sequence(p.prompt, p.chosen, vocab);
    // Inputs at index >= prompt length predict completion tokens and <EOT>.
    std::size_t f = p.prompt.size();
    if (s.size() > static_cast<std::size_t>(policy.config().block_size) + 1) {
      const std::size_t drop = s.size() - static_cast<std::size_t>(policy.config().block_size) - 1;
      s.erase(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(drop));
      f = f > drop ? f - drop : 0;
    }
    seqs.push_back(std::move(s));
    from.push_back(f);
  }
  std::vector<SFTRecord> trace;
  AdamW opt(cfg.optim, policy.parameters());
  Rng rng = make_rng(cfg.seed, "sft.sampling");
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<TokenSeq> part;
    std::vector<std::size_t> part_from;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = uniform_index(rng, seqs.size());
      part.push_back(seqs[i]);
      part_from.push_back(from[i]);
    }
    const TokenBatch batch = sequence_batch(part, part_from, vocab.eot());
    Tape tape;
    Var logits = policy.logits(tape, batch.inputs, batch.rows, batch.cols, true);
    Var loss = ops::cross_entropy(tape, logits, batch.targets, batch.weights,
                                  mask ? rcm_support(*mask, batch.inputs) : ops::SupportFn{});
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value)) throw NumericalError("non-finite SFT loss at step " + std::to_string(step));
    tape.backward(loss);
    opt.step(policy.parameters());
    trace.push_back({step, value});
  }
  return trace;
}

}  // namespace trajgen

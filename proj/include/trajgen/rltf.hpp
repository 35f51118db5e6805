#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "trajgen/connectivity.hpp"
#include "trajgen/corpus.hpp"
#include "trajgen/generate.hpp"
#include "trajgen/optimizer.hpp"
#include "trajgen/pretrain.hpp"
#include "trajgen/road_network.hpp"
#include "trajgen/transformer.hpp"

namespace trajgen {

// Sum of link lengths in meters.
double traj_length(std::span<const LinkId> traj, const RoadNetwork& net);

struct PreferencePair {
  Trajectory prompt;
  Trajectory chosen;    // completion links after the prompt
  Trajectory rejected;
  double gamma_chosen = 0.0;  // |L(real) - L(prompt + completion)|, meters
  double gamma_rejected = 0.0;
  std::size_t source = 0;     // index of the real trajectory
};

// Orders two scored completions; returns false on a Gamma tie.
bool label_pair(const Trajectory& a, double gamma_a, const Trajectory& b, double gamma_b,
                PreferencePair& out);

struct PreferenceConfig {
  double m_frac = 0.25;
  int n_pairs = 500;
  double temperature = 1.0;
  int max_len = 63;
  std::uint64_t seed = 1;
  int max_attempts_factor = 8;  // source draws allowed per requested pair

  void validate() const;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  std::size_t ties = 0;
  std::size_t identical_skipped = 0;
  std::size_t identical_redraws = 0;
  std::size_t attempts = 0;
};

int prompt_links(std::size_t n, double m_frac);

PreferenceDataset build_preference_dataset(const TransformerModel& policy, const ConnectivityMatrix* rcm,
                                           const Corpus& corpus, const RoadNetwork& net, BoundaryMode mode,
                                           const PreferenceConfig& cfg);

// One JSON object per line.
void write_preferences(std::ostream& out, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_preferences(std::istream& in);
void write_preferences_file(const std::string& path, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_preferences_file(const std::string& path);

// Reward model input: start token, prompt, completion, <EOT>.
TokenSeq reward_sequence(std::span<const LinkId> prompt, std::span<const LinkId> completion, const Vocab& vocab);

// Scalar-head copy of the policy architecture; backbone weights are copied
// from `policy`.
TransformerModel make_reward_model(const TransformerModel& policy, std::uint64_t seed);

// Scores at the final <EOT> of each sequence, eval mode.
std::vector<double> reward_scores(const TransformerModel& reward_model, std::span<const TokenSeq> seqs,
                                  const Vocab& vocab);

struct RewardConfig {
  int epochs = 20;
  int batch_size = 16;
  double val_frac = 0.2;
  std::uint64_t seed = 1;
  AdamWConfig optim{.lr = 3e-5};

  void validate() const;
};

struct RewardRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct RewardResult {
  std::vector<RewardRecord> trace;
  double val_accuracy = 0.0;
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
};

// Pairwise logistic loss and accuracy (strict score order) of a pair set.
std::pair<double, double> reward_loss_accuracy(const TransformerModel& reward_model,
                                               std::span<const PreferencePair> pairs, const Vocab& vocab);

RewardResult train_reward_model(TransformerModel& reward_model, std::span<const PreferencePair> pairs,
                                const Vocab& vocab, const RewardConfig& cfg);

// Per-token log-probabilities of seq[first..] given their prefixes, eval mode,
// restricted to the RCM support when `rcm` is non-null.
std::vector<double> sequence_logprobs(const TransformerModel& model, const ConnectivityMatrix* rcm,
                                      std::span<const Token> seq, std::size_t first);

// R = U - beta * sum_t (logp_policy[t] - logp_base[t]).
double ppo_reward(double score, std::span<const double> logp_policy, std::span<const double> logp_base,
                  double beta);

// Scores prompt+completion with U and evaluates both policies on the
// completion tokens (a trailing <EOT> included).
double ppo_reward(const TransformerModel& reward_model, const TransformerModel& policy,
                  const TransformerModel& base_policy, const ConnectivityMatrix* rcm,
                  std::span<const LinkId> prompt, std::span<const Token> completion, const Vocab& vocab,
                  double beta);

// min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double eps);

struct PPOConfig {
  int iterations = 50;
  int rollouts = 32;
  int epochs = 4;
  double beta = 0.1;
  double clip_eps = 0.2;
  double temperature = 1.0;
  double m_frac = 0.25;
  int max_len = 63;
  bool gravity_prompts = false;
  bool rcm_masking = true;
  double kl_ceiling = 1.0;  // nats per completion token
  std::uint64_t seed = 1;
  AdamWConfig optim{.lr = 1e-5};

  void validate() const;
};

struct PPORecord {
  int iteration = 0;
  double mean_reward = 0.0;
  double mean_score = 0.0;
  double mean_kl = 0.0;  // per completion token
  double mean_length = 0.0;  // completion links
};

struct PPOResult {
  std::vector<PPORecord> trace;
};

// `sampler` supplies gravity-weighted prompts when cfg.gravity_prompts is on.
PPOResult ppo_finetune(TransformerModel& policy, const TransformerModel& base_policy,
                       const TransformerModel& reward_model, const ConnectivityMatrix* rcm, const Corpus& corpus,
                       const Vocab& vocab, const PPOConfig& cfg, const GravitySampler* sampler = nullptr);

struct SFTConfig {
  int steps = 200;
  int batch_size = 32;
  bool rcm_masking = true;
  std::uint64_t seed = 1;
  AdamWConfig optim{.lr = 1e-5};

  void validate() const;
};

struct SFTRecord {
  int step = 0;
  double loss = 0.0;
};

// Cross-entropy on prompt+chosen with the loss masked over the prompt.
std::vector<SFTRecord> sft_finetune(TransformerModel& policy, std::span<const PreferencePair> pairs,
                                    const ConnectivityMatrix* rcm, const Vocab& vocab, const SFTConfig& cfg);

}  // namespace trajgen

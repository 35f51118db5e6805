#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trajgen/connectivity.hpp"
#include "trajgen/corpus.hpp"
#include "trajgen/optimizer.hpp"
#include "trajgen/region.hpp"
#include "trajgen/transformer.hpp"

namespace trajgen {

// Draws trajectory indices i.i.d. with probability proportional to
// Gravity(region(first link), region(last link)), floored at 1e-6 of the
// largest value so that every trajectory keeps support. Uniform when
// gravity sampling is off.
class GravitySampler {
 public:
  static constexpr double kWeightFloor = 1e-6;

  GravitySampler(std::span<const Trajectory> corpus, const RegionMap& rmap,
                 const GravityTable& table, bool gravity_on = true);
  // Direct construction from raw per-trajectory gravity values.
  explicit GravitySampler(std::span<const double> raw_weights, bool gravity_on = true);

  // Normalized weights, summing to 1.
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  bool gravity_on() const { return gravity_on_; }

  std::vector<std::size_t> sample(std::size_t k, Rng& rng) const;

 private:
  void init(std::span<const double> raw);

  bool gravity_on_;
  std::vector<double> weights_;
  CategoricalSampler table_;
};

struct TrainConfig {
  int batch_size = 64;
  int steps = 3000;
  int eval_interval = 100;
  int eval_trajectories = 256;  // held-out subset scored at each eval
  std::uint64_t seed = 1;
  bool gravity_sampling = true;
  bool rcm_masking = true;
  AdamWConfig optim;

  void validate() const;
};

struct LossRecord {
  int step = 0;
  double train_loss = 0.0;  // mean training loss since the previous record
  double eval_loss = 0.0;
};

struct PretrainResult {
  std::vector<LossRecord> trace;
  std::size_t truncated = 0;           // training trajectories clipped to block_size
  std::size_t eval_positions_skipped = 0;  // held-out targets outside the RCM
};

// Support function for masked losses: row i may emit rcm.successors(inputs[i]).
ops::SupportFn rcm_support(const ConnectivityMatrix& rcm, std::span<const Token> inputs);

// Masked next-token loss of a batch without recording gradients.
double batch_loss(const TransformerModel& model, const TokenBatch& batch, const ConnectivityMatrix* rcm);

// Held-out loss over trajectory blocks. Positions whose target the RCM
// forbids are skipped and counted when masking is on.
double heldout_loss(const TransformerModel& model, const PackedStream& stream, const Vocab& vocab,
                    const ConnectivityMatrix* rcm, std::size_t max_trajectories,
                    std::size_t* skipped = nullptr);

// Gravity-sampled autoregressive pretraining. `rcm` may be null only when
// cfg.rcm_masking is false.
PretrainResult pretrain(TransformerModel& model, AdamW& optimizer, const Corpus& train,
                        const Corpus& heldout, const Vocab& vocab, const ConnectivityMatrix* rcm,
                        const GravitySampler& sampler, const TrainConfig& cfg);

}  // namespace trajgen

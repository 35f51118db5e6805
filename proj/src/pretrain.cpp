#include "trajgen/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "trajgen/hash.hpp"

namespace trajgen {

GravitySampler::GravitySampler(std::span<const Trajectory> corpus, const RegionMap& rmap,
                               const GravityTable& table, bool gravity_on)
    : gravity_on_(gravity_on) {
  std::vector<double> raw;
  raw.reserve(corpus.size());
  for (const auto& t : corpus) {
    if (t.empty()) throw std::invalid_argument("gravity sampler: empty trajectory");
    raw.push_back(table(rmap.region_of(t.front()), rmap.region_of(t.back())));
  }
  init(raw);
}

GravitySampler::GravitySampler(std::span<const double> raw_weights, bool gravity_on)
    : gravity_on_(gravity_on) {
  init(raw_weights);
}

void GravitySampler::init(std::span<const double> raw) {
  if (raw.empty()) throw std::invalid_argument("gravity sampler over an empty corpus");
  std::vector<double> w(raw.begin(), raw.end());
  if (!gravity_on_) {
    std::fill(w.begin(), w.end(), 1.0);
  } else {
    const double max_g = *std::max_element(w.begin(), w.end());
    const double floor = max_g > 0.0 ? kWeightFloor * max_g : 1.0;
    for (auto& x : w) x = std::max(x, floor);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  weights_ = std::move(w);
  table_ = CategoricalSampler(weights_);
}

std::vector<std::size_t> GravitySampler::sample(std::size_t k, Rng& rng) const {
  std::vector<std::size_t> out(k);
  for (auto& i : out) i = table_.sample(rng);
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (steps < 0) throw ConfigError("pretrain.steps must be >= 0");
  if (eval_interval < 1) throw ConfigError("pretrain.eval_interval must be >= 1");
  if (eval_trajectories < 1) throw ConfigError("pretrain.eval_trajectories must be >= 1");
  if (!(optim.lr >= 0.0)) throw ConfigError("pretrain.lr must be >= 0");
}

ops::SupportFn rcm_support(const ConnectivityMatrix& rcm, std::span<const Token> inputs) {
  return [&rcm, inputs](std::size_t row) { return rcm.successors(inputs[row]); };
}

double batch_loss(const TransformerModel& model, const TokenBatch& batch, const ConnectivityMatrix* rcm) {
  Tape tape(false);
  Var logits = model.logits(tape, batch.inputs, batch.rows, batch.cols);
  Var loss = ops::cross_entropy(tape, logits, batch.targets, batch.weights,
                                rcm ? rcm_support(*rcm, batch.inputs) : ops::SupportFn{});
  return tape.value(loss)(0, 0);
}

double heldout_loss(const TransformerModel& model, const PackedStream& stream, const Vocab& vocab,
                    const ConnectivityMatrix* rcm, std::size_t max_trajectories, std::size_t* skipped) {
  const std::size_t n = std::min(max_trajectories, stream.starts.size());
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  double weighted = 0.0, total = 0.0;
  std::size_t skip = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < n; s += kChunk) {
    std::span<const std::size_t> part(idx.data() + s, std::min(kChunk, n - s));
    TokenBatch b = trajectory_batch(stream, vocab, part);
    if (rcm) {
      for (std::size_t i = 0; i < b.inputs.size(); ++i) {
        if (b.weights[i] > 0.0 && !rcm->allowed(b.inputs[i], b.targets[i])) {
          b.weights[i] = 0.0;
          ++skip;
        }
      }
    }
    const double w = std::accumulate(b.weights.begin(), b.weights.end(), 0.0);
    if (w == 0.0) continue;
    weighted += w * batch_loss(model, b, rcm);
    total += w;
  }
  if (skipped) *skipped = skip;
  return weighted / total;
}

PretrainResult pretrain(TransformerModel& model, AdamW& optimizer, const Corpus& train,
                        const Corpus& heldout, const Vocab& vocab, const ConnectivityMatrix* rcm,
                        const GravitySampler& sampler, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.rcm_masking && rcm == nullptr) throw std::invalid_argument("RCM masking requested without an RCM");
  if (model.config().vocab_size != vocab.size()) throw std::invalid_argument("model and vocabulary sizes differ");
  if (rcm && rcm->vocab_size() != vocab.size()) throw std::invalid_argument("RCM and vocabulary sizes differ");
  if (sampler.size() != train.size()) throw std::invalid_argument("sampler was built over a different corpus");
  const ConnectivityMatrix* mask = cfg.rcm_masking ? rcm : nullptr;

  const PackedStream stream = pack(train, vocab, model.config().block_size);
  const PackedStream held = heldout.empty() ? PackedStream{} : pack(heldout, vocab, model.config().block_size);
  PretrainResult result;
  result.truncated = stream.truncated;
  Rng rng = make_rng(cfg.seed, "pretrain.sampling");

  auto evaluate = [&](int step, double train_loss) {
    std::size_t skipped = 0;
    const double eval = held.starts.empty()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : heldout_loss(model, held, vocab, mask, static_cast<std::size_t>(cfg.eval_trajectories), &skipped);
    result.eval_positions_skipped = skipped;
    result.trace.push_back({step, train_loss, eval});
  };
  if (cfg.steps == 0) return result;

  double running = 0.0;
  int running_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto indices = sampler.sample(static_cast<std::size_t>(cfg.batch_size), rng);
    const TokenBatch batch = trajectory_batch(stream, vocab, indices);
    Tape tape;
    Var logits = model.logits(tape, batch.inputs, batch.rows, batch.cols, true);
    Var loss;
    try {
      loss = ops::cross_entropy(tape, logits, batch.targets, batch.weights,
                                mask ? rcm_support(*mask, batch.inputs) : ops::SupportFn{});
    } catch (const std::domain_error& e) {
      throw std::logic_error(std::string("RC-disallowed training pair: ") + e.what());
    }
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      Fnv1a fp;
      for (auto i : indices) fp.update_pod(static_cast<std::uint64_t>(i));
      throw NumericalError("non-finite training loss at step " + std::to_string(step) + " (batch " +
                           hex64(fp.digest()) + ")");
    }
    tape.backward(loss);
    optimizer.step(model.parameters());
    running += value;
    ++running_n;
    if (step % cfg.eval_interval == 0 || step == cfg.steps) {
      evaluate(step, running / running_n);
      running = 0.0;
      running_n = 0;
    }
  }
  return result;
}

}  // namespace trajgen

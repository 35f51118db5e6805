#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace trajgen {

using Rng = std::mt19937_64;

// Derives an independent seed for a named sub-stream of a master seed.
// Every source of randomness in the pipeline goes through this so that one
// master seed reproduces everything.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view stream,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Cumulative-table categorical sampler, O(log n) per draw.
class CategoricalSampler {
 public:
  CategoricalSampler() = default;
  explicit CategoricalSampler(std::span<const double> weights);

  std::size_t sample(Rng& rng) const;
  std::size_t size() const { return cumulative_.size(); }
  double total() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  bool empty() const { return cumulative_.empty() || total() <= 0.0; }

 private:
  std::vector<double> cumulative_;
};

}  // namespace trajgen

#include "trajgen/rng.hpp"

#include <algorithm>
#include <stdexcept>

#include "trajgen/hash.hpp"

namespace trajgen {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index) {
  std::uint64_t s = splitmix64(master ^ fnv1a(stream));
  return splitmix64(s ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

CategoricalSampler::CategoricalSampler(std::span<const double> weights) {
  cumulative_.reserve(weights.size());
  double acc = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("categorical weight must be nonnegative");
    acc += w;
    cumulative_.push_back(acc);
  }
}

std::size_t CategoricalSampler::sample(Rng& rng) const {
  if (empty()) throw std::logic_error("sampling from an empty categorical");
  const double u = uniform01(rng) * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  auto idx = static_cast<std::size_t>(it - cumulative_.begin());
  // Guard against landing on a trailing zero-weight entry through rounding.
  if (idx >= cumulative_.size()) idx = cumulative_.size() - 1;
  while (idx > 0 && cumulative_[idx] == cumulative_[idx - 1]) --idx;
  return idx;
}

}  // namespace trajgen

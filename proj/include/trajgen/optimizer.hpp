#pragma once

#include <cstdint>
#include <vector>

#include "trajgen/tape.hpp"

namespace trajgen {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

// Adaptive moments with decoupled weight decay.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const AdamWConfig& cfg, const std::vector<Parameter>& params);

  // Clips, updates and clears gradients. Returns the pre-clip gradient norm.
  double step(std::vector<Parameter>& params);

  AdamWConfig& config() { return cfg_; }
  const AdamWConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t step_ = 0;
};

double gradient_norm(const std::vector<Parameter>& params);

}  // namespace trajgen

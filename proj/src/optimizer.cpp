#include "trajgen/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace trajgen {

AdamW::AdamW(const AdamWConfig& cfg, const std::vector<Parameter>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

double gradient_norm(const std::vector<Parameter>& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

double AdamW::step(std::vector<Parameter>& params) {
  if (params.size() != m_.size()) throw std::logic_error("optimizer bound to a different parameter set");
  const double norm = gradient_norm(params);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm at optimizer step " + std::to_string(step_ + 1));
  const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / (norm + 1e-6) : 1.0;
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const Matrix g = p.grad * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    if (p.decay && cfg_.weight_decay > 0.0) p.value *= (1.0 - cfg_.lr * cfg_.weight_decay);
    p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    p.grad.setZero();
  }
  return norm;
}

}  // namespace trajgen

#include "trajgen/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace trajgen {

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, grad_enabled_, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  if (grad_enabled_) bindings_.emplace_back(id, &p);
  return Var{id};
}

Matrix& Tape::grad(Var v) {
  auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (Var in : inputs) needs = needs || nodes_[static_cast<std::size_t>(in.id)].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a tape recorded without gradients");
  const auto& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (root.value.rows() != 1 || root.value.cols() != 1) throw std::logic_error("backward needs a scalar loss");
  grad(loss).setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward(*this);
  }
  for (auto [id, p] : bindings_) {
    const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
    if (g.size() == 0) continue;
    if (p->grad.size() == 0) p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
    p->grad += g;
  }
}

void log_softmax_row(std::span<const double> logits, std::span<const Token> support,
                     std::span<double> out) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (support.empty()) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double x : logits) s += std::exp(x - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
    return;
  }
  std::fill(out.begin(), out.end(), kNegInf);
  double m = kNegInf;
  for (Token j : support) m = std::max(m, logits[static_cast<std::size_t>(j)]);
  double s = 0.0;
  for (Token j : support) s += std::exp(logits[static_cast<std::size_t>(j)] - m);
  const double lse = m + std::log(s);
  for (Token j : support) out[static_cast<std::size_t>(j)] = logits[static_cast<std::size_t>(j)] - lse;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal, Matrix* probs) {
  const auto n = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix s = (q * k.transpose()) * scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index limit = causal ? i + 1 : s.cols();
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < limit; ++j) m = std::max(m, s(i, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < limit; ++j) {
      s(i, j) = std::exp(s(i, j) - m);
      z += s(i, j);
    }
    for (Eigen::Index j = 0; j < limit; ++j) s(i, j) /= z;
    for (Eigen::Index j = limit; j < s.cols(); ++j) s(i, j) = 0.0;
  }
  Matrix out = s * v;
  if (probs) *probs = std::move(s);
  return out;
}

namespace ops {

Var matmul(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) * t.value(b);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {a, b}, [a, b, r](Tape& tp) {
    const Matrix& g = tp.grad(r);
    if (tp.needs_grad(a)) tp.grad(a).noalias() += g * tp.value(b).transpose();
    if (tp.needs_grad(b)) tp.grad(b).noalias() += tp.value(a).transpose() * g;
  });
}

Var add(Tape& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols()) {
    throw std::invalid_argument("add: shape mismatch");
  }
  Matrix out = t.value(a) + t.value(b);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {a, b}, [a, b, r](Tape& tp) {
    const Matrix& g = tp.grad(r);
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(b)) tp.grad(b) += g;
  });
}

Var add_row(Tape& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols()) {
    throw std::invalid_argument("add_row: shape mismatch");
  }
  Matrix out = t.value(a).rowwise() + t.value(row).row(0);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {a, row}, [a, row, r](Tape& tp) {
    const Matrix& g = tp.grad(r);
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(row)) tp.grad(row) += g.colwise().sum();
  });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a) * s;
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {a}, [a, r, s](Tape& tp) { tp.grad(a) += tp.grad(r) * s; });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  Matrix out = t.value(x) * t.value(w);
  out.rowwise() += t.value(b).row(0);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {x, w, b}, [x, w, b, r](Tape& tp) {
    const Matrix& g = tp.grad(r);
    if (tp.needs_grad(x)) tp.grad(x).noalias() += g * tp.value(w).transpose();
    if (tp.needs_grad(w)) tp.grad(w).noalias() += tp.value(x).transpose() * g;
    if (tp.needs_grad(b)) tp.grad(b) += g.colwise().sum();
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = t.value(x);
  const auto n = xv.rows();
  const auto m = xv.cols();
  Matrix xhat(n, m);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * rstd(i);
  }
  Matrix out = xhat.array().rowwise() * t.value(gain).row(0).array();
  out.rowwise() += t.value(bias).row(0);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {x, gain, bias},
                [x, gain, bias, r, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp) {
                  const Matrix& g = tp.grad(r);
                  if (tp.needs_grad(gain)) tp.grad(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (tp.needs_grad(bias)) tp.grad(bias) += g.colwise().sum();
                  if (!tp.needs_grad(x)) return;
                  Matrix dxhat = g.array().rowwise() * tp.value(gain).row(0).array();
                  Matrix& gx = tp.grad(x);
                  const double inv_m = 1.0 / static_cast<double>(dxhat.cols());
                  for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                    const double mean_d = dxhat.row(i).sum() * inv_m;
                    const double mean_dx = dxhat.row(i).dot(xhat.row(i)) * inv_m;
                    gx.row(i).array() +=
                        rstd(i) * (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx);
                  }
                });
}

Var gelu(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  Matrix out(xv.rows(), xv.cols());
  const double* in = xv.data();
  double* o = out.data();
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    o[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * std::numbers::sqrt2 * 0.5));
  }
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {x}, [x, r](Tape& tp) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    const Matrix& xv = tp.value(x);
    const Matrix& g = tp.grad(r);
    Matrix& gx = tp.grad(x);
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx.data()[i] += g.data()[i] * (cdf + v * pdf);
    }
  });
}

Var dropout(Tape& t, Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  const Matrix& xv = t.value(x);
  Matrix mask(xv.rows(), xv.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < p ? 0.0 : keep;
  Matrix out = xv.cwiseProduct(mask);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {x}, [x, r, mask = std::move(mask)](Tape& tp) {
    tp.grad(x) += tp.grad(r).cwiseProduct(mask);
  });
}

Var embedding(Tape& t, Var table, std::span<const Token> ids) {
  const Matrix& tv = t.value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) + " outside table");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  Var r{static_cast<int>(t.size())};
  std::vector<Token> idv(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [table, r, idv = std::move(idv)](Tape& tp) {
    const Matrix& g = tp.grad(r);
    Matrix& gt = tp.grad(table);
    for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var gather_rows(Tape& t, Var x, std::span<const int> rows) {
  const Matrix& xv = t.value(x);
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  Var r{static_cast<int>(t.size())};
  std::vector<int> rv(rows.begin(), rows.end());
  return t.push(std::move(out), {x}, [x, r, rv = std::move(rv)](Tape& tp) {
    const Matrix& g = tp.grad(r);
    Matrix& gx = tp.grad(x);
    for (std::size_t i = 0; i < rv.size(); ++i) gx.row(rv[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var causal_self_attention(Tape& t, Var qkv, int batch, int seq_len, int n_heads) {
  const Matrix& in = t.value(qkv);
  const auto d = in.cols() / 3;
  const auto dh = d / n_heads;
  if (in.rows() != static_cast<Eigen::Index>(batch) * seq_len || d * 3 != in.cols() || dh * n_heads != d) {
    throw std::invalid_argument("causal_self_attention: shape mismatch");
  }
  Matrix out(in.rows(), d);
  const bool keep = t.grad_enabled() && t.needs_grad(qkv);
  std::vector<Matrix> probs(keep ? static_cast<std::size_t>(batch * n_heads) : 0);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
    for (int h = 0; h < n_heads; ++h) {
      const Eigen::Index c = h * dh;
      Matrix p;
      out.block(r0, c, seq_len, dh) =
          attention(in.block(r0, c, seq_len, dh), in.block(r0, d + c, seq_len, dh),
                    in.block(r0, 2 * d + c, seq_len, dh), true, &p);
      if (keep) probs[static_cast<std::size_t>(b * n_heads + h)] = std::move(p);
    }
  }
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {qkv},
                [qkv, r, batch, seq_len, n_heads, d, dh, probs = std::move(probs)](Tape& tp) {
                  const Matrix& in = tp.value(qkv);
                  const Matrix& g = tp.grad(r);
                  Matrix& gi = tp.grad(qkv);
                  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                  for (int b = 0; b < batch; ++b) {
                    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
                    for (int h = 0; h < n_heads; ++h) {
                      const Eigen::Index c = h * dh;
                      const Matrix& p = probs[static_cast<std::size_t>(b * n_heads + h)];
                      const Matrix go = g.block(r0, c, seq_len, dh);
                      const Matrix q = in.block(r0, c, seq_len, dh);
                      const Matrix k = in.block(r0, d + c, seq_len, dh);
                      const Matrix v = in.block(r0, 2 * d + c, seq_len, dh);
                      gi.block(r0, 2 * d + c, seq_len, dh).noalias() += p.transpose() * go;
                      Matrix dp = go * v.transpose();
                      // softmax Jacobian, row by row
                      Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
                      Matrix ds = p.array() * (dp.colwise() - rowdot).array();
                      ds *= scale;
                      gi.block(r0, c, seq_len, dh).noalias() += ds * k;
                      gi.block(r0, d + c, seq_len, dh).noalias() += ds.transpose() * q;
                    }
                  }
                });
}

namespace {

void check_rows(const Matrix& logits, std::size_t n, const char* what) {
  if (static_cast<std::size_t>(logits.rows()) != n) {
    throw std::invalid_argument(std::string(what) + ": row count mismatch");
  }
}

}  // namespace

Var cross_entropy(Tape& t, Var logits, std::span<const Token> targets,
                  std::span<const double> weights, const SupportFn& support) {
  const Matrix& lv = t.value(logits);
  check_rows(lv, targets.size(), "cross_entropy");
  check_rows(lv, weights.size(), "cross_entropy");
  const auto v = static_cast<std::size_t>(lv.cols());
  double total_w = 0.0;
  for (double w : weights) total_w += w;
  if (!(total_w > 0.0)) throw std::invalid_argument("cross_entropy: every position is masked");

  // Softmax probabilities are cached for backward, restricted to the support.
  Matrix probs = Matrix::Zero(lv.rows(), lv.cols());
  std::vector<double> lsm(v);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const auto sup = support ? support(i) : std::span<const Token>{};
    log_softmax_row({lv.row(static_cast<Eigen::Index>(i)).data(), v}, sup, lsm);
    const double lp = lsm[static_cast<std::size_t>(targets[i])];
    if (!std::isfinite(lp)) {
      throw std::domain_error("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                              std::to_string(i) + " lies outside the allowed support");
    }
    loss -= weights[i] * lp;
    for (std::size_t j = 0; j < v; ++j) probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(lsm[j]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / total_w;
  Var r{static_cast<int>(t.size())};
  std::vector<Token> tg(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  return t.push(std::move(out), {logits},
                [logits, r, total_w, probs = std::move(probs), tg = std::move(tg), wt = std::move(wt)](Tape& tp) {
                  const double g = tp.grad(r)(0, 0) / total_w;
                  Matrix& gl = tp.grad(logits);
                  for (std::size_t i = 0; i < tg.size(); ++i) {
                    if (wt[i] == 0.0) continue;
                    const auto row = static_cast<Eigen::Index>(i);
                    gl.row(row) += (g * wt[i]) * probs.row(row);
                    gl(row, tg[i]) -= g * wt[i];
                  }
                });
}

Var clipped_policy_loss(Tape& t, Var logits, std::span<const Token> actions,
                        std::span<const double> weights, std::span<const double> old_logp,
                        std::span<const double> advantages, double clip_eps,
                        const SupportFn& support) {
  const Matrix& lv = t.value(logits);
  check_rows(lv, actions.size(), "clipped_policy_loss");
  check_rows(lv, weights.size(), "clipped_policy_loss");
  check_rows(lv, old_logp.size(), "clipped_policy_loss");
  check_rows(lv, advantages.size(), "clipped_policy_loss");
  const auto v = static_cast<std::size_t>(lv.cols());
  double total_w = 0.0;
  for (double w : weights) total_w += w;
  if (!(total_w > 0.0)) throw std::invalid_argument("clipped_policy_loss: every position is masked");

  Matrix probs = Matrix::Zero(lv.rows(), lv.cols());
  std::vector<double> coeff(actions.size(), 0.0);  // d objective / d logp
  std::vector<double> lsm(v);
  double objective = 0.0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const auto sup = support ? support(i) : std::span<const Token>{};
    log_softmax_row({lv.row(static_cast<Eigen::Index>(i)).data(), v}, sup, lsm);
    const double lp = lsm[static_cast<std::size_t>(actions[i])];
    if (!std::isfinite(lp)) throw std::domain_error("clipped_policy_loss: action outside the allowed support");
    const double ratio = std::exp(lp - old_logp[i]);
    const double a = advantages[i];
    const double unclipped = ratio * a;
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * a;
    objective += weights[i] * std::min(unclipped, clipped);
    coeff[i] = unclipped <= clipped ? unclipped : 0.0;
    for (std::size_t j = 0; j < v; ++j) probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(lsm[j]);
  }
  Matrix out(1, 1);
  out(0, 0) = -objective / total_w;
  Var r{static_cast<int>(t.size())};
  std::vector<Token> act(actions.begin(), actions.end());
  std::vector<double> wt(weights.begin(), weights.end());
  return t.push(std::move(out), {logits},
                [logits, r, total_w, probs = std::move(probs), act = std::move(act), wt = std::move(wt),
                 coeff = std::move(coeff)](Tape& tp) {
                  const double g = tp.grad(r)(0, 0) / total_w;
                  Matrix& gl = tp.grad(logits);
                  for (std::size_t i = 0; i < act.size(); ++i) {
                    if (wt[i] == 0.0 || coeff[i] == 0.0) continue;
                    const auto row = static_cast<Eigen::Index>(i);
                    // d(-obj)/dlogits = -coeff * (onehot - p)
                    const double s = g * wt[i] * coeff[i];
                    gl.row(row) += s * probs.row(row);
                    gl(row, act[i]) -= s;
                  }
                });
}

Var pairwise_logistic_loss(Tape& t, Var scores) {
  const Matrix& s = t.value(scores);
  if (s.cols() != 1 || s.rows() % 2 != 0 || s.rows() == 0) {
    throw std::invalid_argument("pairwise_logistic_loss: expected a (2k x 1) score column");
  }
  const auto k = s.rows() / 2;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double z = s(i, 0) - s(k + i, 0);
    loss += z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(k);
  Var r{static_cast<int>(t.size())};
  return t.push(std::move(out), {scores}, [scores, r, k](Tape& tp) {
    const Matrix& s = tp.value(scores);
    const double g = tp.grad(r)(0, 0) / static_cast<double>(k);
    Matrix& gs = tp.grad(scores);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double z = s(i, 0) - s(k + i, 0);
      const double sig_neg = 1.0 / (1.0 + std::exp(z));  // sigma(-z)
      gs(i, 0) -= g * sig_neg;
      gs(k + i, 0) += g * sig_neg;
    }
  });
}

}  // namespace ops
}  // namespace trajgen

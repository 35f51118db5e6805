#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trajgen/common.hpp"
#include "trajgen/rng.hpp"

namespace trajgen {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = false;  // receives decoupled weight decay
};

class Tape;

// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward()
// walks them in reverse. Parameters are copied in and their gradients are
// accumulated into Parameter::grad when backward() finishes.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  Var parameter(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  // Gradient slot of a node, allocated on first access.
  Matrix& grad(Var v);

  using Backward = std::function<void(Tape&)>;
  // Appends an op result. `backward` reads grad(result) and accumulates into
  // its inputs; it is dropped when no input needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and propagates.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> bindings_;
};

// Differentiable ops. Shapes follow row-major conventions: activations are
// (rows x features).
namespace ops {

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double s);
// x W + b.
Var linear(Tape& t, Var x, Var w, Var b);
// Row-wise layer norm with affine gain/bias (1 x m each).
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
// Exact GELU, x * Phi(x).
Var gelu(Tape& t, Var x);
// Inverted dropout; identity when p == 0.
Var dropout(Tape& t, Var x, double p, Rng& rng);
// Rows of `table` selected by `ids`.
Var embedding(Tape& t, Var table, std::span<const Token> ids);
Var gather_rows(Tape& t, Var x, std::span<const int> rows);

// Multi-head causal self-attention over a packed (batch*seq x 3*d) QKV
// projection; returns (batch*seq x d). Sequences are contiguous row blocks.
Var causal_self_attention(Tape& t, Var qkv, int batch, int seq_len, int n_heads);

// Restricts each row's softmax support. allowed(r) returns the permitted
// columns of row r, or an empty span for the full vocabulary.
using SupportFn = std::function<std::span<const Token>(std::size_t row)>;

// Weighted mean of -log softmax(logits)[target] over rows with weight > 0.
Var cross_entropy(Tape& t, Var logits, std::span<const Token> targets,
                  std::span<const double> weights, const SupportFn& support = {});

// Clipped surrogate policy loss averaged over rows with weight > 0:
//   -mean min(r A, clip(r, 1-eps, 1+eps) A),  r = exp(logp - old_logp)
Var clipped_policy_loss(Tape& t, Var logits, std::span<const Token> actions,
                        std::span<const double> weights, std::span<const double> old_logp,
                        std::span<const double> advantages, double clip_eps,
                        const SupportFn& support = {});

// Mean over pairs of -log sigmoid(score[chosen] - score[rejected]) for a
// (2k x 1) score column holding chosen rows 0..k-1 and rejected rows k..2k-1.
Var pairwise_logistic_loss(Tape& t, Var scores);

}  // namespace ops

// Scaled dot-product attention for one head: softmax(Q K^T / sqrt(d_k) + mask) V.
// Returns the context; `probs` receives the attention weights when non-null.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, bool causal,
                 Matrix* probs = nullptr);

// Log-softmax over the support (all columns when `support` is empty); entries
// outside the support are -inf.
void log_softmax_row(std::span<const double> logits, std::span<const Token> support,
                     std::span<double> out);

}  // namespace trajgen

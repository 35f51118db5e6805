#include "trajgen/transformer.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace trajgen {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
  if (n_heads < 1) throw ConfigError("model.n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) throw ConfigError("model.d_model must be a positive multiple of model.n_heads");
  if (block_size < 2) throw ConfigError("model.block_size must be >= 2");
  if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
}

std::size_t ModelConfig::parameter_count() const {
  const auto d = static_cast<std::size_t>(d_model);
  const auto v = static_cast<std::size_t>(vocab_size);
  const std::size_t per_layer = 12 * d * d + 13 * d;
  const std::size_t head_params = head == HeadKind::language ? d * v : d + 1;
  return v * d + static_cast<std::size_t>(block_size) * d + static_cast<std::size_t>(n_layers) * per_layer +
         2 * d + head_params;
}

bool ModelConfig::same_shape(const ModelConfig& o) const {
  return n_layers == o.n_layers && n_heads == o.n_heads && d_model == o.d_model &&
         block_size == o.block_size && vocab_size == o.vocab_size && head == o.head;
}

ModelConfig desk_model_config(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig paper_model_config(int vocab_size, int block_size) {
  ModelConfig c;
  c.n_layers = 6;
  c.n_heads = 4;
  c.d_model = 64;
  c.block_size = block_size;
  c.vocab_size = vocab_size;
  return c;
}

TransformerModel::TransformerModel(const ModelConfig& cfg)
    : cfg_(cfg), dropout_rng_(make_rng(cfg.seed, "model.dropout")) {
  cfg_.validate();
  Rng rng = make_rng(cfg.seed, "model.init");
  const int d = cfg.d_model;
  const double std_w = 0.02;
  const double std_proj = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  auto normal = [&rng](int rows, int cols, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  auto zeros = [](int rows, int cols) { return Matrix::Zero(rows, cols).eval(); };
  auto ones = [](int rows, int cols) { return Matrix::Ones(rows, cols).eval(); };

  wte_ = add_param("wte", normal(cfg.vocab_size, d, std_w), false);
  wpe_ = add_param("wpe", normal(cfg.block_size, d, std_w), false);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = add_param(p + "ln1.g", ones(1, d), false);
    li.ln1_b = add_param(p + "ln1.b", zeros(1, d), false);
    li.w_qkv = add_param(p + "attn.w_qkv", normal(d, 3 * d, std_w), true);
    li.b_qkv = add_param(p + "attn.b_qkv", zeros(1, 3 * d), false);
    li.w_o = add_param(p + "attn.w_o", normal(d, d, std_proj), true);
    li.b_o = add_param(p + "attn.b_o", zeros(1, d), false);
    li.ln2_g = add_param(p + "ln2.g", ones(1, d), false);
    li.ln2_b = add_param(p + "ln2.b", zeros(1, d), false);
    li.w_fc = add_param(p + "mlp.w_fc", normal(d, 4 * d, std_w), true);
    li.b_fc = add_param(p + "mlp.b_fc", zeros(1, 4 * d), false);
    li.w_proj = add_param(p + "mlp.w_proj", normal(4 * d, d, std_proj), true);
    li.b_proj = add_param(p + "mlp.b_proj", zeros(1, d), false);
    layers_.push_back(li);
  }
  lnf_g_ = add_param("lnf.g", ones(1, d), false);
  lnf_b_ = add_param("lnf.b", zeros(1, d), false);
  if (cfg.head == HeadKind::language) {
    head_w_ = add_param("head.w", normal(d, cfg.vocab_size, std_w), true);
  } else {
    head_w_ = add_param("score.w", normal(d, 1, std_w), true);
    head_b_ = add_param("score.b", zeros(1, 1), false);
  }
}

int TransformerModel::add_param(std::string name, Matrix value, bool decay) {
  Parameter p;
  p.name = std::move(name);
  p.grad = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  p.decay = decay;
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

std::size_t TransformerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void TransformerModel::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

void TransformerModel::check_tokens(std::span<const Token> tokens, int rows, int cols) const {
  if (rows < 1 || cols < 1 || tokens.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw std::invalid_argument("token grid shape mismatch");
  }
  if (cols > cfg_.block_size) {
    throw std::invalid_argument("sequence length " + std::to_string(cols) + " exceeds block_size " +
                                std::to_string(cfg_.block_size));
  }
  for (Token t : tokens) {
    if (t < 0 || t >= cfg_.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(t) + " outside vocabulary of size " +
                                  std::to_string(cfg_.vocab_size));
    }
  }
}

// Shared graph construction; `param` maps a parameter index to a tape Var.
template <typename ParamFn>
Var TransformerModel::hidden_impl(Tape& tape, ParamFn&& param, std::span<const Token> tokens, int rows,
                                  int cols, Rng* drop_rng) const {
  check_tokens(tokens, rows, cols);
  const double p_drop = drop_rng ? cfg_.dropout : 0.0;
  std::vector<Token> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<Token>(i % static_cast<std::size_t>(cols));
  Var x = ops::add(tape, ops::embedding(tape, param(wte_), tokens), ops::embedding(tape, param(wpe_), positions));
  if (p_drop > 0.0) x = ops::dropout(tape, x, p_drop, *drop_rng);
  for (const auto& l : layers_) {
    Var h = ops::layer_norm(tape, x, param(l.ln1_g), param(l.ln1_b));
    Var qkv = ops::linear(tape, h, param(l.w_qkv), param(l.b_qkv));
    Var a = ops::causal_self_attention(tape, qkv, rows, cols, cfg_.n_heads);
    a = ops::linear(tape, a, param(l.w_o), param(l.b_o));
    if (p_drop > 0.0) a = ops::dropout(tape, a, p_drop, *drop_rng);
    x = ops::add(tape, x, a);
    h = ops::layer_norm(tape, x, param(l.ln2_g), param(l.ln2_b));
    Var f = ops::gelu(tape, ops::linear(tape, h, param(l.w_fc), param(l.b_fc)));
    f = ops::linear(tape, f, param(l.w_proj), param(l.b_proj));
    if (p_drop > 0.0) f = ops::dropout(tape, f, p_drop, *drop_rng);
    x = ops::add(tape, x, f);
  }
  return ops::layer_norm(tape, x, param(lnf_g_), param(lnf_b_));
}

template <typename ParamFn>
Var TransformerModel::scores_impl(Tape& tape, ParamFn&& param, std::span<const Token> tokens, int rows,
                                  int cols, std::span<const int> positions, Rng* drop_rng) const {
  if (cfg_.head != HeadKind::scalar) throw std::logic_error("scores() on a language-head model");
  if (positions.size() != static_cast<std::size_t>(rows)) throw std::invalid_argument("one score position per row");
  Var h = hidden_impl(tape, param, tokens, rows, cols, drop_rng);
  std::vector<int> picks(positions.size());
  for (std::size_t r = 0; r < positions.size(); ++r) {
    if (positions[r] < 0 || positions[r] >= cols) throw std::out_of_range("score position outside row");
    picks[r] = static_cast<int>(r) * cols + positions[r];
  }
  Var last = ops::gather_rows(tape, h, picks);
  return ops::linear(tape, last, param(head_w_), param(head_b_));
}

Var TransformerModel::hidden(Tape& tape, std::span<const Token> tokens, int rows, int cols, bool train) {
  auto param = [&](int i) { return tape.parameter(params_[static_cast<std::size_t>(i)]); };
  return hidden_impl(tape, param, tokens, rows, cols, train ? &dropout_rng_ : nullptr);
}

Var TransformerModel::logits(Tape& tape, std::span<const Token> tokens, int rows, int cols, bool train) {
  if (cfg_.head != HeadKind::language) throw std::logic_error("logits() on a scalar-head model");
  Var h = hidden(tape, tokens, rows, cols, train);
  return ops::matmul(tape, h, tape.parameter(params_[static_cast<std::size_t>(head_w_)]));
}

Var TransformerModel::scores(Tape& tape, std::span<const Token> tokens, int rows, int cols,
                             std::span<const int> positions, bool train) {
  auto param = [&](int i) { return tape.parameter(params_[static_cast<std::size_t>(i)]); };
  return scores_impl(tape, param, tokens, rows, cols, positions, train ? &dropout_rng_ : nullptr);
}

Var TransformerModel::logits(Tape& tape, std::span<const Token> tokens, int rows, int cols) const {
  if (tape.grad_enabled()) throw std::logic_error("const forward needs a tape without gradients");
  if (cfg_.head != HeadKind::language) throw std::logic_error("logits() on a scalar-head model");
  auto param = [&](int i) { return tape.constant(params_[static_cast<std::size_t>(i)].value); };
  Var h = hidden_impl(tape, param, tokens, rows, cols, nullptr);
  return ops::matmul(tape, h, param(head_w_));
}

Var TransformerModel::scores(Tape& tape, std::span<const Token> tokens, int rows, int cols,
                             std::span<const int> positions) const {
  if (tape.grad_enabled()) throw std::logic_error("const forward needs a tape without gradients");
  auto param = [&](int i) { return tape.constant(params_[static_cast<std::size_t>(i)].value); };
  return scores_impl(tape, param, tokens, rows, cols, positions, nullptr);
}

Matrix TransformerModel::forward(std::span<const Token> tokens) const {
  Tape tape(false);
  const int cols = static_cast<int>(tokens.size());
  if (cfg_.head == HeadKind::language) return tape.value(logits(tape, tokens, 1, cols));
  auto param = [&](int i) { return tape.constant(params_[static_cast<std::size_t>(i)].value); };
  Var h = hidden_impl(tape, param, tokens, 1, cols, nullptr);
  Matrix s = tape.value(h) * params_[static_cast<std::size_t>(head_w_)].value;
  s.array() += params_[static_cast<std::size_t>(head_b_)].value(0, 0);
  return s;
}

std::size_t TransformerModel::copy_matching(const TransformerModel& other) {
  std::size_t copied = 0;
  for (auto& p : params_) {
    for (const auto& q : other.params_) {
      if (p.name == q.name && p.value.rows() == q.value.rows() && p.value.cols() == q.value.cols()) {
        p.value = q.value;
        ++copied;
        break;
      }
    }
  }
  return copied;
}

namespace {

Eigen::RowVectorXd layer_norm_row(const Eigen::RowVectorXd& x, const Matrix& g, const Matrix& b) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  const double rstd = 1.0 / std::sqrt(var + 1e-5);
  Eigen::RowVectorXd y = ((x.array() - mu) * rstd).matrix();
  return (y.array() * g.row(0).array() + b.row(0).array()).matrix();
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const TransformerModel& model) : model_(&model) {
  if (model.config().head != HeadKind::language) throw std::logic_error("decoder needs a language head");
  const auto& cfg = model.config();
  keys_.assign(static_cast<std::size_t>(cfg.n_layers), Matrix::Zero(cfg.block_size, cfg.d_model));
  values_.assign(static_cast<std::size_t>(cfg.n_layers), Matrix::Zero(cfg.block_size, cfg.d_model));
}

void IncrementalDecoder::reset() { length_ = 0; }

const Eigen::RowVectorXd& IncrementalDecoder::push(Token token) {
  const auto& cfg = model_->config();
  if (length_ >= cfg.block_size) throw std::length_error("decoder context is full");
  if (token < 0 || token >= cfg.vocab_size) throw std::invalid_argument("token outside vocabulary");
  const auto& P = model_->params_;
  auto val = [&](int i) -> const Matrix& { return P[static_cast<std::size_t>(i)].value; };
  const int d = cfg.d_model;
  const int dh = d / cfg.n_heads;
  const int pos = length_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::RowVectorXd x = val(model_->wte_).row(token) + val(model_->wpe_).row(pos);
  for (std::size_t l = 0; l < model_->layers_.size(); ++l) {
    const auto& li = model_->layers_[l];
    Eigen::RowVectorXd h = layer_norm_row(x, val(li.ln1_g), val(li.ln1_b));
    Eigen::RowVectorXd qkv = h * val(li.w_qkv) + val(li.b_qkv).row(0);
    keys_[l].row(pos) = qkv.segment(d, d);
    values_[l].row(pos) = qkv.segment(2 * d, d);
    Eigen::RowVectorXd ctx(d);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      const auto q = qkv.segment(hd * dh, dh);
      Eigen::VectorXd s = (keys_[l].block(0, hd * dh, pos + 1, dh) * q.transpose()) * scale;
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      ctx.segment(hd * dh, dh) = s.transpose() * values_[l].block(0, hd * dh, pos + 1, dh);
    }
    x += ctx * val(li.w_o) + val(li.b_o).row(0);
    Eigen::RowVectorXd h2 = layer_norm_row(x, val(li.ln2_g), val(li.ln2_b));
    Eigen::RowVectorXd f = h2 * val(li.w_fc) + val(li.b_fc).row(0);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = 0.5 * f(i) * (1.0 + std::erf(f(i) * std::numbers::sqrt2 * 0.5));
    x += f * val(li.w_proj) + val(li.b_proj).row(0);
  }
  logits_ = layer_norm_row(x, val(model_->lnf_g_), val(model_->lnf_b_)) * val(model_->head_w_);
  ++length_;
  return logits_;
}

}  // namespace trajgen

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajgen/tape.hpp"

namespace trajgen {

enum class HeadKind : int {
  language = 0,  // d_model -> vocab_size logits, no bias
  scalar = 1,    // d_model -> 1 score with bias (reward model)
};

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_model = 32;
  int block_size = 64;
  int vocab_size = 0;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  HeadKind head = HeadKind::language;

  void validate() const;
  // Closed-form parameter count.
  std::size_t parameter_count() const;
  bool same_shape(const ModelConfig& other) const;
};

// Desk-scale and paper-scale presets.
ModelConfig desk_model_config(int vocab_size);
ModelConfig paper_model_config(int vocab_size, int block_size);

// Decoder-only transformer: token + learned positional embeddings, pre-norm
// blocks (causal self-attention, 4x GELU MLP), final layer norm, output head.
class TransformerModel {
 public:
  explicit TransformerModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  // Hidden states after the final layer norm for a (rows x cols) token grid.
  Var hidden(Tape& tape, std::span<const Token> tokens, int rows, int cols, bool train);
  // Language-model logits ((rows*cols) x vocab_size).
  Var logits(Tape& tape, std::span<const Token> tokens, int rows, int cols, bool train);
  // Scalar head applied at one position per row; `positions[r]` indexes the
  // column of row r. Returns (rows x 1).
  Var scores(Tape& tape, std::span<const Token> tokens, int rows, int cols,
             std::span<const int> positions, bool train);

  // Eval-mode variants; the tape must be recorded without gradients.
  Var logits(Tape& tape, std::span<const Token> tokens, int rows, int cols) const;
  Var scores(Tape& tape, std::span<const Token> tokens, int rows, int cols,
             std::span<const int> positions) const;

  // Eval-mode logits for one sequence (T x vocab_size).
  Matrix forward(std::span<const Token> tokens) const;

  // Dropout stream; saved in checkpoints.
  Rng& dropout_rng() { return dropout_rng_; }
  const Rng& dropout_rng() const { return dropout_rng_; }

  // Copies every parameter with matching name and shape from `other`;
  // returns the number copied.
  std::size_t copy_matching(const TransformerModel& other);

 private:
  friend class IncrementalDecoder;
  struct LayerIndex {
    int ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  int add_param(std::string name, Matrix value, bool decay);
  template <typename ParamFn>
  Var hidden_impl(Tape& tape, ParamFn&& param, std::span<const Token> tokens, int rows, int cols,
                  Rng* drop_rng) const;
  template <typename ParamFn>
  Var scores_impl(Tape& tape, ParamFn&& param, std::span<const Token> tokens, int rows, int cols,
                  std::span<const int> positions, Rng* drop_rng) const;
  void check_tokens(std::span<const Token> tokens, int rows, int cols) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  int wte_ = -1, wpe_ = -1, lnf_g_ = -1, lnf_b_ = -1, head_w_ = -1, head_b_ = -1;
  std::vector<LayerIndex> layers_;
  Rng dropout_rng_;
};

// Incremental eval-mode decoder with a key/value cache; produces the same
// logits as TransformerModel::forward on the growing prefix.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const TransformerModel& model);

  void reset();
  // Appends a token and returns the logits at its position.
  const Eigen::RowVectorXd& push(Token token);
  int length() const { return length_; }
  int capacity() const { return model_->config().block_size; }

 private:
  const TransformerModel* model_;
  int length_ = 0;
  std::vector<Matrix> keys_;    // per layer, block_size x d_model
  std::vector<Matrix> values_;  // per layer
  Eigen::RowVectorXd logits_;
};

}  // namespace trajgen

#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "trajgen/checkpoint.hpp"
#include "trajgen/optimizer.hpp"
#include "trajgen/transformer.hpp"

using namespace trajgen;

namespace {

ModelConfig tiny(int vocab = 12, HeadKind head = HeadKind::language) {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.block_size = 8;
  c.vocab_size = vocab;
  c.dropout = 0.0;
  c.seed = 17;
  c.head = head;
  return c;
}

TokenSeq random_tokens(std::size_t n, int vocab, std::uint64_t seed) {
  Rng rng = make_rng(seed, "test.tokens");
  TokenSeq t(n);
  for (auto& x : t) x = static_cast<Token>(uniform_index(rng, static_cast<std::size_t>(vocab)));
  return t;
}

// Scales the tiny init up so that gradients are not vanishingly small.
void spread(TransformerModel& m, std::uint64_t seed) {
  Rng rng = make_rng(seed, "test.spread");
  for (auto& p : m.parameters()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.3 * (2.0 * uniform01(rng) - 1.0);
  }
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / (std::string("trajgen_test_") + name)).string();
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  for (int layers : {1, 2, 3}) {
    for (HeadKind head : {HeadKind::language, HeadKind::scalar}) {
      ModelConfig c = tiny(30, head);
      c.n_layers = layers;
      c.d_model = 16;
      const std::size_t d = 16, V = 30, B = 8, L = static_cast<std::size_t>(layers);
      const std::size_t expect = V * d + B * d + L * (12 * d * d + 13 * d) + 2 * d + (head == HeadKind::language ? d * V : d + 1);
      CHECK(TransformerModel(c).parameter_count() == expect);
      CHECK(c.parameter_count() == expect);
    }
  }
  CHECK(desk_model_config(361).parameter_count() == 50624);
}

TEST_CASE("config validation") {
  ModelConfig c = tiny();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.block_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("language-model gradients match central differences") {
  TransformerModel m(tiny());
  spread(m, 1);
  const TokenSeq in = random_tokens(10, 12, 2), tg = random_tokens(10, 12, 3);
  const std::vector<double> w{1, 1, 1, 0, 1, 1, 1, 1, 0.5, 1};
  // Restricted support on every other row, target always included.
  std::vector<std::vector<Token>> sup(10);
  for (std::size_t i = 0; i < 10; i += 2) sup[i] = {tg[i], static_cast<Token>((tg[i] + 5) % 12), 11};
  for (auto& s : sup) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  auto loss = [&](TransformerModel& model, Tape& t) {
    Var logits = model.logits(t, in, 2, 5, false);
    return ops::cross_entropy(t, logits, tg, w, [&](std::size_t r) { return std::span<const Token>(sup[r]); });
  };
  const auto r = testing::gradient_check(m, loss);
  INFO("worst " << r.worst);
  CHECK(r.checked == m.parameter_count());
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("scalar-head gradients match central differences") {
  TransformerModel m(tiny(12, HeadKind::scalar));
  spread(m, 4);
  const TokenSeq in = random_tokens(12, 12, 5);
  const std::vector<int> pos{2, 1, 2, 0};
  auto loss = [&](TransformerModel& model, Tape& t) {
    return ops::pairwise_logistic_loss(t, model.scores(t, in, 4, 3, pos, false));
  };
  const auto r = testing::gradient_check(m, loss);
  INFO("worst " << r.worst);
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("clipped policy loss gradients match central differences") {
  TransformerModel m(tiny());
  spread(m, 6);
  const TokenSeq in = random_tokens(8, 12, 7), act = random_tokens(8, 12, 8);
  const std::vector<double> w{0, 1, 1, 1, 0, 1, 1, 1};
  const std::vector<double> adv{0, 1.3, -0.7, 0.2, 0, -1.1, 0.9, 0.4};
  // Old log-probs near the current ones keep most rows unclipped; one is far
  // outside the trust region on each side.
  std::vector<double> old(8, 0.0);
  {
    Tape t(false);
    const Matrix lg = t.value(m.logits(t, in, 2, 4, false));
    std::vector<double> lsm(12);
    for (std::size_t i = 0; i < 8; ++i) {
      log_softmax_row({lg.row(static_cast<Eigen::Index>(i)).data(), 12}, {}, lsm);
      old[i] = lsm[static_cast<std::size_t>(act[i])] + 0.05 * static_cast<double>(i % 3);
    }
    old[2] -= 2.0;
    old[5] += 2.0;
  }
  auto loss = [&](TransformerModel& model, Tape& t) {
    return ops::clipped_policy_loss(t, model.logits(t, in, 2, 4, false), act, w, old, adv, 0.2);
  };
  const auto r = testing::gradient_check(m, loss);
  INFO("worst " << r.worst);
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("forward shape, causality and determinism") {
  TransformerModel m(tiny());
  TokenSeq t = random_tokens(5, 12, 9);
  const Matrix a = m.forward(t);
  CHECK(a.rows() == 5);
  CHECK(a.cols() == 12);
  CHECK(TransformerModel(tiny()).forward(t) == a);
  for (std::size_t pos = 0; pos + 1 < t.size(); ++pos) {
    TokenSeq u = t;
    u[pos + 1] = (u[pos + 1] + 3) % 12;
    const Matrix b = m.forward(u);
    for (Eigen::Index r = 0; r <= static_cast<Eigen::Index>(pos); ++r) REQUIRE(b.row(r) == a.row(r));
  }
  CHECK_THROWS(m.forward(TokenSeq{12}));
  CHECK_THROWS(m.forward(random_tokens(9, 12, 1)));
}

TEST_CASE("incremental decoder equals full forward") {
  ModelConfig c = tiny(20);
  c.n_layers = 2;
  c.d_model = 16;
  TransformerModel m(c);
  spread(m, 10);
  const TokenSeq t = random_tokens(8, 20, 11);
  const Matrix full = m.forward(t);
  IncrementalDecoder dec(m);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Eigen::RowVectorXd row = dec.push(t[i]);
    REQUIRE((row - full.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(dec.push(0), std::length_error);
  dec.reset();
  CHECK(dec.length() == 0);
}

TEST_CASE("optimizer behaviour") {
  TransformerModel m(tiny());
  const TokenSeq in = random_tokens(8, 12, 12), tg = random_tokens(8, 12, 13);
  const std::vector<double> w(8, 1.0);
  auto loss_value = [&] {
    Tape t(false);
    return t.value(ops::cross_entropy(t, m.logits(t, in, 1, 8), tg, w))(0, 0);
  };
  auto grads = [&] {
    Tape t;
    t.backward(ops::cross_entropy(t, m.logits(t, in, 1, 8, false), tg, w));
  };

  AdamWConfig zero;
  zero.lr = 0.0;
  zero.weight_decay = 0.0;
  AdamW frozen(zero, m.parameters());
  const auto before = m.parameters();
  grads();
  frozen.step(m.parameters());
  for (std::size_t i = 0; i < before.size(); ++i) REQUIRE(m.parameters()[i].value == before[i].value);
  CHECK(frozen.step_count() == 1);

  AdamWConfig small;
  small.lr = 1e-3;
  AdamW opt(small, m.parameters());
  const double l0 = loss_value();
  grads();
  opt.step(m.parameters());
  CHECK(loss_value() < l0);
  for (const auto& p : m.parameters()) CHECK((p.grad.size() == 0 || p.grad.isZero()));

  m.parameters()[0].grad = Matrix::Constant(m.parameters()[0].value.rows(), m.parameters()[0].value.cols(),
                                            std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(opt.step(m.parameters()), NumericalError);
}

TEST_CASE("checkpoint round trip") {
  ModelConfig c = tiny();
  c.dropout = 0.1;
  TransformerModel m(c);
  spread(m, 14);
  AdamW opt(AdamWConfig{}, m.parameters());
  const TokenSeq in = random_tokens(8, 12, 15);
  {
    Tape t;
    t.backward(ops::cross_entropy(t, m.logits(t, in, 1, 8, true), in, std::vector<double>(8, 1.0)));
    opt.step(m.parameters());
  }
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, m, &opt, "{\"note\":1}");
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.metadata == "{\"note\":1}");
  CHECK(ck.has_optimizer);
  CHECK(ck.optimizer.step_count() == 1);
  CHECK(ck.model.forward(in) == m.forward(in));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    REQUIRE(ck.model.parameters()[i].value == m.parameters()[i].value);
    REQUIRE(ck.optimizer.first_moments()[i] == opt.first_moments()[i]);
    REQUIRE(ck.optimizer.second_moments()[i] == opt.second_moments()[i]);
  }
  CHECK(ck.model.dropout_rng() == m.dropout_rng());

  ModelConfig other = c;
  other.vocab_size = 13;
  TransformerModel wrong(other);
  CHECK_THROWS_WITH(load_checkpoint_into(path, wrong, nullptr), doctest::Contains("vocab_size"));

  // Corruption is detected by the checksum.
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f != nullptr);
    std::fseek(f, 200, SEEK_SET);
    const int ch = std::fgetc(f);
    std::fseek(f, 200, SEEK_SET);
    std::fputc(ch ^ 0x5a, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("resumed training reproduces the unbroken loss curve") {
  ModelConfig c = tiny();
  c.dropout = 0.1;
  auto batch_for = [](int step) { return random_tokens(16, 12, 100 + static_cast<std::uint64_t>(step)); };
  auto train_step = [&](TransformerModel& m, AdamW& opt, int step) {
    const TokenSeq b = batch_for(step);
    const TokenSeq in(b.begin(), b.end() - 1), tg(b.begin() + 1, b.end());
    Tape t;
    Var l = ops::cross_entropy(t, m.logits(t, in, 3, 5, true), tg, std::vector<double>(15, 1.0));
    const double v = t.value(l)(0, 0);
    t.backward(l);
    opt.step(m.parameters());
    return v;
  };
  TransformerModel a(c);
  AdamW oa(AdamWConfig{}, a.parameters());
  std::vector<double> unbroken;
  for (int s = 0; s < 10; ++s) unbroken.push_back(train_step(a, oa, s));

  TransformerModel b(c);
  AdamW ob(AdamWConfig{}, b.parameters());
  std::vector<double> resumed;
  for (int s = 0; s < 5; ++s) resumed.push_back(train_step(b, ob, s));
  const std::string path = temp_path("resume.ckpt");
  save_checkpoint(path, b, &ob, "");
  TransformerModel r(c);
  AdamW orr;
  load_checkpoint_into(path, r, &orr);
  for (int s = 5; s < 10; ++s) resumed.push_back(train_step(r, orr, s));
  CHECK(resumed == unbroken);
  std::filesystem::remove(path);
}

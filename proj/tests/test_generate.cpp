#include <set>

#include "doctest.h"
#include "support.hpp"
#include "trajgen/eval.hpp"
#include "trajgen/generate.hpp"
#include "trajgen/pretrain.hpp"

using namespace trajgen;

namespace {

ModelConfig small_config(int vocab, int block = 16) {
  ModelConfig c = desk_model_config(vocab);
  c.n_layers = 1;
  c.d_model = 16;
  c.block_size = block;
  c.seed = 5;
  return c;
}

// Makes every position's hidden state the same vector and points the head at
// token `favorite`, so greedy decoding emits it forever.
void force_token(TransformerModel& m, Token favorite) {
  for (auto& p : m.parameters()) {
    if (p.name == "lnf.g") p.value.setZero();
    if (p.name == "lnf.b") p.value.setOnes();
  }
  for (auto& p : m.parameters()) {
    if (p.name == "head.w") {
      p.value.setZero();
      p.value.col(favorite).setConstant(1.0);
    }
  }
}

}  // namespace

TEST_CASE("sample_token") {
  Rng rng = make_rng(1, "test.sample");
  const std::vector<double> logits{0.1, 2.0, -1.0, 1.9};
  const std::vector<Token> all{0, 1, 2, 3}, some{0, 2};
  CHECK(sample_token(logits, all, 0.0, rng) == 1);
  CHECK(sample_token(logits, some, 0.0, rng) == 0);
  for (double t : {0.1, 0.5, 1.0, 3.0}) {
    std::vector<double> scaled(logits);
    for (auto& x : scaled) x /= t;
    CHECK(std::max_element(scaled.begin(), scaled.end()) - scaled.begin() == 1);
  }
  for (int i = 0; i < 200; ++i) {
    const Token t = sample_token(logits, some, 1.0, rng);
    REQUIRE((t == 0 || t == 2));
  }
  std::vector<double> freq(4, 0.0);
  for (int i = 0; i < 20000; ++i) freq[static_cast<std::size_t>(sample_token(logits, all, 1.0, rng))] += 1.0 / 20000;
  double z = 0;
  for (double l : logits) z += std::exp(l);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(freq[j] - std::exp(logits[j]) / z) < 0.015);
  CHECK_THROWS(sample_token(logits, {}, 1.0, rng));
  CHECK_THROWS(sample_token(logits, all, -1.0, rng));
}

TEST_CASE("masked generation stays connected") {
  const WorldConfig w = testing::small_world(4, 200);
  const RoadNetwork net = generate_grid_network(w);
  const Corpus corpus = simulate_corpus(net, w);
  const int L = static_cast<int>(net.num_links());
  const ConnectivityMatrix rcm = build_rcm(corpus, L);
  const TransformerModel m(small_config(L + 1));  // untrained: near-uniform logits
  GenerateOptions opts;
  opts.max_len = 15;
  const auto g = generate_corpus(m, &rcm, 300, opts, 9);
  CHECK(g.shortfall == 0);
  CHECK(connectivity(g.corpus, rcm) == 1.0);
  for (const auto& t : g.corpus) REQUIRE(t.size() <= 15);

  opts.rcm_masking = false;
  const auto free = generate_corpus(m, nullptr, 300, opts, 9);
  CHECK(connectivity(free.corpus, rcm) < 1.0);
}

TEST_CASE("forced termination and prompt checks") {
  // Link 2 is only ever observed at the end of a trajectory.
  const Corpus corpus{{0, 1, 2}, {1, 2}};
  const ConnectivityMatrix rcm = build_rcm(corpus, 4);
  const TransformerModel m(small_config(5, 8));
  GenerateOptions opts;
  Rng rng = make_rng(2, "test.gen");
  const std::vector<LinkId> prompt{0, 1, 2};
  const Generation g = generate(m, &rcm, opts, rng, prompt);
  CHECK(g.trajectory == Trajectory{0, 1, 2});
  CHECK(g.ended_with_eot);
  CHECK(g.completion == TokenSeq{4});

  const std::vector<LinkId> broken{0, 2};
  CHECK_THROWS(generate(m, &rcm, opts, rng, broken));
  const std::vector<LinkId> too_long(8, 0);
  CHECK_THROWS(generate(m, nullptr, GenerateOptions{.rcm_masking = false}, rng, too_long));
  CHECK_THROWS(generate_corpus(m, &rcm, 0, opts, 1));
}

TEST_CASE("greedy generation is deterministic") {
  const WorldConfig w = testing::small_world(4, 200);
  const RoadNetwork net = generate_grid_network(w);
  const Corpus corpus = simulate_corpus(net, w);
  const ConnectivityMatrix rcm = build_rcm(corpus, static_cast<int>(net.num_links()));
  const TransformerModel m(small_config(static_cast<int>(net.num_links()) + 1));
  GenerateOptions opts;
  opts.temperature = 0.0;
  Rng a = make_rng(1, "x"), b = make_rng(2, "y");
  const std::vector<LinkId> prompt{corpus[0][0]};
  CHECK(generate(m, &rcm, opts, a, prompt).trajectory == generate(m, &rcm, opts, b, prompt).trajectory);
}

TEST_CASE("sliding window and length cap") {
  TransformerModel m(small_config(6, 4));
  force_token(m, 3);
  GenerateOptions opts;
  opts.rcm_masking = false;
  opts.temperature = 0.0;
  opts.max_len = 10;
  Rng rng = make_rng(3, "test.window");
  const Generation g = generate(m, nullptr, opts, rng);
  CHECK(g.trajectory == Trajectory(10, 3));
  CHECK(g.window_truncated);
  CHECK_FALSE(g.ended_with_eot);

  opts.max_len = 3;
  const Generation s = generate(m, nullptr, opts, rng);
  CHECK(s.trajectory.size() == 3);
  CHECK_FALSE(s.window_truncated);
}

TEST_CASE("empty generations are redrawn and reported") {
  TransformerModel m(small_config(6, 4));
  force_token(m, 5);  // <EOT> for 5 links
  GenerateOptions opts;
  opts.rcm_masking = false;
  opts.temperature = 0.0;
  const auto g = generate_corpus(m, nullptr, 4, opts, 1, 1, 3);
  CHECK(g.corpus.empty());
  CHECK(g.shortfall == 4);
  CHECK(g.empty_redraws == 16);
}

TEST_CASE("corpus generation is independent of thread count") {
  const WorldConfig w = testing::small_world(4, 200);
  const RoadNetwork net = generate_grid_network(w);
  const ConnectivityMatrix rcm = build_rcm(simulate_corpus(net, w), static_cast<int>(net.num_links()));
  const TransformerModel m(small_config(static_cast<int>(net.num_links()) + 1));
  GenerateOptions opts;
  opts.max_len = 12;
  const auto a = generate_corpus(m, &rcm, 60, opts, 4, 1);
  const auto b = generate_corpus(m, &rcm, 60, opts, 4, 3);
  CHECK(a.corpus == b.corpus);
  CHECK(generate_corpus(m, &rcm, 60, opts, 5, 1).corpus != a.corpus);
}

TEST_CASE("diversity grows with temperature on a trained model") {
  const WorldConfig w = testing::small_world(5, 600);
  const RoadNetwork net = generate_grid_network(w);
  const Corpus corpus = simulate_corpus(net, w);
  const int L = static_cast<int>(net.num_links());
  const Vocab vocab(L, BoundaryMode::eot_only);
  const ConnectivityMatrix rcm = build_rcm(corpus, L);
  TransformerModel m(small_config(vocab.size(), 32));
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 16;
  cfg.eval_interval = 200;
  cfg.gravity_sampling = false;
  AdamW opt(cfg.optim, m.parameters());
  pretrain(m, opt, corpus, {}, vocab, &rcm, GravitySampler(std::vector<double>(corpus.size(), 1.0), false), cfg);
  std::vector<std::size_t> distinct;
  for (double t : {0.5, 1.0, 1.5}) {
    GenerateOptions opts;
    opts.temperature = t;
    opts.max_len = 31;
    const auto g = generate_corpus(m, &rcm, 400, opts, 6);
    distinct.push_back(std::set<Trajectory>(g.corpus.begin(), g.corpus.end()).size());
  }
  INFO(distinct[0] << " " << distinct[1] << " " << distinct[2]);
  CHECK(distinct[0] <= distinct[1]);
  CHECK(distinct[1] <= distinct[2]);
}

#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "trajgen/corpus.hpp"
#include "trajgen/rng.hpp"

using namespace trajgen;

namespace {

Corpus random_corpus(int n, int num_links, std::uint64_t seed, std::size_t max_len = 12) {
  Rng rng = make_rng(seed, "test.corpus");
  Corpus c;
  for (int i = 0; i < n; ++i) {
    Trajectory t(1 + uniform_index(rng, max_len));
    for (auto& l : t) l = static_cast<LinkId>(uniform_index(rng, static_cast<std::size_t>(num_links)));
    c.push_back(t);
  }
  return c;
}

}  // namespace

TEST_CASE("encode examples") {
  const Vocab eot(100, BoundaryMode::eot_only);
  const Vocab dual(100, BoundaryMode::bot_and_eot);
  CHECK(encode(Trajectory{5, 9, 2}, eot) == TokenSeq{5, 9, 2, 100});
  CHECK(encode(Trajectory{7}, dual) == TokenSeq{101, 7, 100});
  CHECK(eot.size() == 101);
  CHECK(dual.size() == 102);
  CHECK_THROWS_WITH_AS(encode(Trajectory{1, 100}, eot), doctest::Contains("index 1"), std::invalid_argument);
  CHECK_THROWS_AS(eot.bot(), std::logic_error);
}

TEST_CASE("decode examples") {
  const Vocab v(100, BoundaryMode::eot_only);
  CHECK(decode(TokenSeq{5, 9, 2, 100}, v) == Trajectory{5, 9, 2});
  CHECK(decode(TokenSeq{100}, v).empty());
  CHECK(decode(TokenSeq{5, 100, 9}, v) == Trajectory{5});
  const Vocab d(100, BoundaryMode::bot_and_eot);
  CHECK(decode(TokenSeq{101, 4, 100}, d) == Trajectory{4});
}

TEST_CASE("encode/decode round trip") {
  for (auto mode : {BoundaryMode::eot_only, BoundaryMode::bot_and_eot}) {
    const Vocab v(50, mode);
    for (const auto& t : random_corpus(1000, 50, 5)) REQUIRE(decode(encode(t, v), v) == t);
  }
  CHECK(parse_boundary_mode(to_string(BoundaryMode::bot_and_eot)) == BoundaryMode::bot_and_eot);
  CHECK_THROWS(parse_boundary_mode("both"));
}

TEST_CASE("split") {
  Corpus ten;
  for (int i = 0; i < 10; ++i) ten.push_back({i});
  const auto [train, test] = split(ten, 0.8, 3);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);
  CHECK(split(ten, 0.8, 3).first == train);
  CHECK_THROWS(split(Corpus{{1}}, 0.8, 1));
  CHECK_THROWS(split(ten, 1.0, 1));

  Corpus big;
  for (int i = 0; i < 1000; ++i) big.push_back({i});
  const auto [a, b] = split(big, 0.8, 9);
  std::set<LinkId> sa, sb;
  for (const auto& t : a) sa.insert(t[0]);
  for (const auto& t : b) sb.insert(t[0]);
  CHECK(sa.size() == 800);
  CHECK(sb.size() == 200);
  std::vector<LinkId> both;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
  CHECK(both.empty());
}

TEST_CASE("packed stream") {
  const Corpus c = random_corpus(200, 30, 8);
  for (auto mode : {BoundaryMode::eot_only, BoundaryMode::bot_and_eot}) {
    const Vocab v(30, mode);
    const PackedStream s = pack(c, v, 64);
    std::size_t expect = 0;
    for (const auto& t : c) expect += t.size() + (mode == BoundaryMode::bot_and_eot ? 2 : 1);
    CHECK(s.tokens.size() == expect);
    CHECK(std::count(s.tokens.begin(), s.tokens.end(), v.eot()) == static_cast<long>(c.size()));
    CHECK(s.truncated == 0);
  }
  const Vocab v(30, BoundaryMode::eot_only);
  const PackedStream clipped = pack(Corpus{Trajectory(10, 1), {2}}, v, 4);
  CHECK(clipped.truncated == 1);
  CHECK(clipped.lengths[0] == 4);  // 3 links + <EOT>
}

TEST_CASE("next token batch") {
  const Vocab v(10, BoundaryMode::eot_only);
  PackedStream s;
  s.tokens = {1, 2, 3, 10};
  s.starts = {0};
  s.lengths = {4};
  s.block_size = 3;
  const std::vector<std::size_t> p0{0};
  const TokenBatch b = next_token_batch(s, p0);
  CHECK(b.inputs == TokenSeq{1, 2, 3});
  CHECK(b.targets == TokenSeq{2, 3, 10});
  const std::vector<std::size_t> bad{1};
  CHECK_THROWS(next_token_batch(s, bad));

  const PackedStream big = pack(random_corpus(100, 10, 2), v, 8);
  Rng rng = make_rng(1, "test.batch");
  std::vector<std::size_t> pos;
  for (int i = 0; i < 20; ++i) pos.push_back(uniform_index(rng, big.tokens.size() - 9));
  const TokenBatch r = next_token_batch(big, pos);
  for (int row = 0; row < r.rows; ++row) {
    for (int c = 0; c + 1 < r.cols; ++c) {
      REQUIRE(r.targets[static_cast<std::size_t>(row * r.cols + c)] == r.inputs[static_cast<std::size_t>(row * r.cols + c + 1)]);
    }
  }
}

TEST_CASE("trajectory batch blocks") {
  const Vocab v(10, BoundaryMode::eot_only);
  const PackedStream s = pack(Corpus{{1, 2, 3}, {4}}, v, 8);
  const std::vector<std::size_t> idx{0, 1};
  const TokenBatch b = trajectory_batch(s, v, idx);
  CHECK(b.rows == 2);
  CHECK(b.cols == 4);
  CHECK(b.inputs == TokenSeq{10, 1, 2, 3, 10, 4, 10, 10});
  CHECK(b.targets == TokenSeq{1, 2, 3, 10, 4, 10, 10, 10});
  CHECK(b.weights == std::vector<double>{1, 1, 1, 1, 1, 1, 0, 0});

  const Vocab d(10, BoundaryMode::bot_and_eot);
  const PackedStream sd = pack(Corpus{{1, 2}}, d, 8);
  const std::vector<std::size_t> one{0};
  const TokenBatch bd = trajectory_batch(sd, d, one);
  CHECK(bd.inputs == TokenSeq{11, 1, 2});
  CHECK(bd.targets == TokenSeq{1, 2, 10});
}

TEST_CASE("corpus file io") {
  const Corpus c = random_corpus(50, 20, 4);
  std::stringstream ss;
  write_corpus(ss, c, std::vector<std::string>{"seed=4"});
  CHECK(read_corpus(ss) == c);
  std::stringstream bad("1 2 x\n");
  CHECK_THROWS_AS(read_corpus(bad), FormatError);
  CHECK_THROWS_AS(validate_corpus(Corpus{{1, 25}}, 20, "test"), FormatError);
  CHECK_THROWS_AS(validate_corpus(Corpus{{}}, 20, "test"), FormatError);
}

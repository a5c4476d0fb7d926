#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "deskrl/errors.hpp"
#include "deskrl/rewards.hpp"
#include "deskrl/task.hpp"
#include "oracles.hpp"

using namespace deskrl;

namespace {

Completion boxed(const std::string& digits) {
  Completion c;
  c.tokens.push_back(Vocabulary::kBoxOpen);
  for (char d : digits) c.tokens.push_back(Vocabulary::digit_token(d - '0'));
  c.tokens.push_back(Vocabulary::kBoxClose);
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    c.contexts.push_back(0);
    c.logprobs.push_back(-1.0);
  }
  c.answer = extract_answer(c.tokens, make_vocabulary());
  return c;
}

Completion unparseable() {
  Completion c;
  c.tokens = {Vocabulary::kEos};
  c.contexts = {0};
  c.logprobs = {-1.0};
  c.answer = extract_answer(c.tokens, make_vocabulary());
  return c;
}

RolloutGroup seven_rollouts() {
  RolloutGroup g;
  g.prompt = generate_prompt(0, 1);  // ground truth 0
  for (const char* s : {"5", "5", "5", "9", "9", "2"}) g.completions.push_back(boxed(s));
  g.completions.push_back(unparseable());
  return g;
}

ContextMap tiny_map() {
  ContextMap m;
  m.vocab_size = 18;
  m.position_buckets = 1;
  m.prompt_buckets = 1;
  return m;
}

}  // namespace

TEST_CASE("plurality voting splits 5,5,5,9,9,2,unparseable as expected") {
  RolloutGroup g = seven_rollouts();
  ClusterStats stats;
  auto r = cluster_rewards(g, &stats);

  CHECK(stats.n_parseable == 6);
  CHECK(r[0] == doctest::Approx(0.5));
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[2] == doctest::Approx(0.5));
  CHECK(r[3] == doctest::Approx(1.0 / 3));
  CHECK(r[4] == doctest::Approx(1.0 / 3));
  CHECK(r[5] == doctest::Approx(1.0 / 6));
  CHECK(r[6] == 0.0);

  CHECK(stats.cluster_of[0] == stats.cluster_of[1]);
  CHECK(stats.cluster_of[1] == stats.cluster_of[2]);
  CHECK(stats.cluster_of[3] == stats.cluster_of[4]);
  CHECK(stats.cluster_of[0] != stats.cluster_of[3]);
  CHECK(stats.cluster_of[6] == -1);
  CHECK(stats.cluster_size[stats.cluster_of[0]] == 3);
}

TEST_CASE("unanimous groups score 1 and empty clusters score 0") {
  RolloutGroup all_agree;
  all_agree.prompt = generate_prompt(0, 1);
  for (int i = 0; i < 4; ++i) all_agree.completions.push_back(boxed("7"));
  // leading zeros join the same cluster
  all_agree.completions.push_back(boxed("07"));
  for (double r : cluster_rewards(all_agree)) CHECK(r == doctest::Approx(1.0));

  RolloutGroup none;
  none.prompt = generate_prompt(0, 1);
  for (int i = 0; i < 3; ++i) none.completions.push_back(unparseable());
  ClusterStats stats;
  for (double r : cluster_rewards(none, &stats)) CHECK(r == 0.0);
  CHECK(stats.n_parseable == 0);
}

TEST_CASE("format rewards flag parseable rollouts") {
  RolloutGroup g = seven_rollouts();
  auto f = format_rewards(g);
  for (int i = 0; i < 6; ++i) CHECK(f[i] == 1.0);
  CHECK(f[6] == 0.0);
}

TEST_CASE("format channel folds in at the configured weight") {
  RolloutGroup g = seven_rollouts();
  auto cf = compose_cf_channel(cluster_rewards(g), format_rewards(g), 0.1);
  CHECK(cf[0] == doctest::Approx(0.6));
  CHECK(cf[3] == doctest::Approx(1.0 / 3 + 0.1));
  CHECK(cf[5] == doctest::Approx(1.0 / 6 + 0.1));
  CHECK(cf[6] == 0.0);

  auto plain = compose_cf_channel(cluster_rewards(g), format_rewards(g), 0.0);
  auto vote = cluster_rewards(g);
  for (int i = 0; i < g.size(); ++i) CHECK(plain[i] == vote[i]);

  CHECK_THROWS_AS(compose_cf_channel({1.0}, {1.0, 0.0}, 0.1), ValidationError);
}

TEST_CASE("a uniform row has zero certainty") {
  PolicyParams p = make_policy(tiny_map());
  Completion c = boxed("3");
  CHECK(self_certainty(p, c) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(uniform_kl(p, 0) < 1e-12);
}

TEST_CASE("certainty matches direct summation on a peaked row") {
  PolicyParams p = make_policy(tiny_map());
  p.row(0)[5] = 10.0;

  Completion c;
  c.tokens = {5};
  c.contexts = {0};
  c.logprobs = {-0.1};
  c.answer = extract_answer(c.tokens, make_vocabulary());

  auto probs = oracles::row_probs(p, 0);
  double hand = 0.0;
  for (double q : probs) hand += (1.0 / 18) * (std::log(1.0 / 18) - std::log(q));
  CHECK(self_certainty(p, c) == doctest::Approx(hand).epsilon(1e-10));
  CHECK(uniform_kl(p, 0) == doctest::Approx(hand).epsilon(1e-10));
  CHECK(hand > 0.0);
}

TEST_CASE("certainty averages per position, independent of length") {
  PolicyParams p = make_policy(tiny_map());
  p.row(0)[2] = 3.0;

  Completion one;
  one.tokens = {2};
  one.contexts = {0};
  one.logprobs = {-0.5};

  Completion three;
  three.tokens = {2, 2, 2};
  three.contexts = {0, 0, 0};
  three.logprobs = {-0.5, -0.5, -0.5};

  CHECK(self_certainty(p, one) == doctest::Approx(self_certainty(p, three)).epsilon(1e-12));

  Completion empty;
  CHECK_THROWS_AS(self_certainty(p, empty), ValidationError);
}

TEST_CASE("certainty rewards cover the whole group") {
  PolicyParams p = make_policy(tiny_map());
  p.row(0)[4] = 2.0;
  RolloutGroup g = seven_rollouts();
  auto r = self_certainty_rewards(p, g);
  REQUIRE(static_cast<int>(r.size()) == g.size());
  for (double x : r) CHECK(x > 0.0);
}

TEST_CASE("ground truth rewards score exact modular answers") {
  RolloutGroup g;
  g.prompt = generate_prompt(0, 1);  // (3+4) mod 7 = 0
  g.completions.push_back(boxed("0"));
  g.completions.push_back(boxed("00"));  // same value, leading zero
  g.completions.push_back(boxed("7"));   // congruent but not canonical: no credit
  g.completions.push_back(unparseable());

  auto r = ground_truth_rewards(g);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == 1.0);
  CHECK(r[2] == 0.0);
  CHECK(r[3] == 0.0);
}

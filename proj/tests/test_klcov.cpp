#include <doctest.h>

#include <cmath>
#include <vector>

#include "deskrl/errors.hpp"
#include "deskrl/klcov.hpp"
#include "deskrl/policy.hpp"
#include "oracles.hpp"

using namespace deskrl;

namespace {

// single-context batch builder for hand-sized cases
TokenBatch hand_batch(const std::vector<double>& lp_cur, const std::vector<double>& lp_roll,
                      const std::vector<double>& adv) {
  TokenBatch b;
  for (std::size_t i = 0; i < lp_cur.size(); ++i) {
    b.token.push_back(0);
    b.context.push_back(0);
    b.rollout.push_back(static_cast<int>(i));
    b.logp_current.push_back(lp_cur[i]);
    b.logp_rollout.push_back(lp_roll[i]);
    b.logp_reference.push_back(lp_roll[i]);
    b.advantage.push_back(adv[i]);
    b.mask.push_back(1);
  }
  return b;
}

}  // namespace

TEST_CASE("clipped surrogate hand values") {
  CHECK(clipped_surrogate(1.0, 2.0, 0.2) == doctest::Approx(-2.0));
  CHECK(clipped_surrogate(1.0, -1.0, 0.2) == doctest::Approx(1.0));
  // ratio above the ceiling with positive advantage: clipped branch wins
  CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(-2.4));
  // ratio below the floor with negative advantage: floor shields the update
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(0.8));
  // zero advantage is always zero loss
  CHECK(clipped_surrogate(3.0, 0.0, 0.2) == 0.0);
}

TEST_CASE("covariance hand values") {
  auto r2 = covariances(hand_batch({-1.0, -3.0}, {-1.0, -3.0}, {1.0, -1.0}));
  CHECK(r2.mean_logprob == doctest::Approx(-2.0));
  CHECK(r2.mean_advantage == doctest::Approx(0.0));
  CHECK(r2.covariance[0] == doctest::Approx(1.0));
  CHECK(r2.covariance[1] == doctest::Approx(1.0));
  CHECK(r2.n_unmasked == 2);

  auto r3 = covariances(hand_batch({-1.0, -2.0, -3.0}, {-1.0, -2.0, -3.0}, {2.0, 0.0, -2.0}));
  CHECK(r3.covariance[0] == doctest::Approx(2.0));
  CHECK(r3.covariance[1] == doctest::Approx(0.0));
  CHECK(r3.covariance[2] == doctest::Approx(2.0));

  // constant advantages have nothing to covary with
  auto flat = covariances(hand_batch({-0.5, -1.5, -2.5}, {-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}));
  for (double c : flat.covariance) CHECK(c == doctest::Approx(0.0));
}

TEST_CASE("masked tokens never enter covariance statistics") {
  TokenBatch b = hand_batch({-1.0, -9.0, -3.0}, {-1.0, -9.0, -3.0}, {1.0, 5.0, -1.0});
  b.mask[1] = 0;
  auto r = covariances(b);
  CHECK(r.n_unmasked == 2);
  CHECK(r.mean_logprob == doctest::Approx(-2.0));
  CHECK(r.covariance[1] == 0.0);
  CHECK(r.ranked.size() == 2);

  TokenBatch dead = hand_batch({-1.0}, {-1.0}, {1.0});
  dead.mask[0] = 0;
  CHECK_THROWS_AS(covariances(dead), ValidationError);
}

TEST_CASE("gate takes the floor(k N) top covariances, ties by index") {
  // N=100, k=0.02: exactly the two largest
  std::vector<double> lp(100, -2.0);
  std::vector<double> adv(100, 0.0);
  lp[31] = -1.0;
  adv[31] = 3.0;
  lp[77] = -3.0;
  adv[77] = -3.0;
  auto b = hand_batch(lp, lp, adv);
  auto gate = select_gate(covariances(b), 0.02);
  REQUIRE(gate.size() == 2);
  CHECK(gate[0] == 31);
  CHECK(gate[1] == 77);

  CHECK(select_gate(covariances(b), 0.0).empty());

  // equal covariances: ties resolve toward low indices
  auto ties = hand_batch({-1.0, -3.0, -1.0, -3.0}, {-1.0, -3.0, -1.0, -3.0},
                         {1.0, -1.0, 1.0, -1.0});
  auto g2 = select_gate(covariances(ties), 0.5);
  REQUIRE(g2.size() == 2);
  CHECK(g2[0] == 0);
  CHECK(g2[1] == 1);
}

TEST_CASE("gate agrees with a brute-force reranking on random batches") {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 1 + static_cast<int>(rng() % 200);
    auto b = oracles::random_gate_batch(rng, n, rep % 2 == 1);
    for (double k : {0.0, 0.02, 0.1, 0.5}) {
      auto got = select_gate(covariances(b), k);
      auto want = oracles::brute_force_gate(b, k);
      CHECK(got == want);
      CHECK(got.size() ==
            static_cast<std::size_t>(std::floor(k * b.unmasked_count())));
    }
  }
}

TEST_CASE("gated tokens trade the clip for an absolute log-ratio penalty") {
  // rho = 1: loss is plain -A with no penalty
  auto b1 = hand_batch({-1.0, -1.0}, {-1.0, -1.0}, {2.0, -0.5});
  auto l1 = per_token_loss(b1, {0, 1}, 0.2, 0.05);
  CHECK(l1[0] == doctest::Approx(-2.0));
  CHECK(l1[1] == doctest::Approx(0.5));

  // rho = e, A = 1, beta = 0.05 -> -e + 0.05
  auto b2 = hand_batch({-1.0}, {-2.0}, {1.0});
  auto l2 = per_token_loss(b2, {0}, 0.2, 0.05);
  CHECK(l2[0] == doctest::Approx(-std::exp(1.0) + 0.05).epsilon(1e-12));
  // the same token outside the gate would have clipped at 1.2
  auto l2_clip = per_token_loss(b2, {}, 0.2, 0.05);
  CHECK(l2_clip[0] == doctest::Approx(-1.2).epsilon(1e-12));

  // an empty gate reduces every token to the clipped surrogate
  std::mt19937_64 rng(5);
  auto rb = oracles::random_gate_batch(rng, 40, false);
  auto no_gate = per_token_loss(rb, {}, 0.2, 0.05);
  for (int i = 0; i < rb.size(); ++i)
    CHECK(no_gate[i] ==
          doctest::Approx(clipped_surrogate(rb.ratio(i), rb.advantage[i], 0.2)).epsilon(1e-12));

  // masked entries contribute nothing
  rb.mask[3] = 0;
  CHECK(per_token_loss(rb, {}, 0.2, 0.05)[3] == 0.0);
}

TEST_CASE("token branches classify by gate and clip activity") {
  // rho: 1.0 (inside band), 1.5 with A>0 (clips), gated, masked
  TokenBatch b = hand_batch({-1.0, -1.0, -1.0, -1.0},
                            {-1.0, -1.0 - std::log(1.5), -1.0, -1.0},
                            {1.0, 1.0, 1.0, 1.0});
  b.mask[3] = 0;
  auto branches = classify_tokens(b, {2}, 0.2);
  CHECK(branches[0] == TokenBranch::unclipped);
  CHECK(branches[1] == TokenBranch::clipped);
  CHECK(branches[2] == TokenBranch::gated);
  CHECK(branches[3] == TokenBranch::masked);
}

TEST_CASE("reference kl vanishes at the reference and matches hand sums") {
  ContextMap m;
  m.vocab_size = 18;
  m.position_buckets = 1;
  m.prompt_buckets = 1;
  std::mt19937_64 rng(31);
  PolicyParams p = oracles::random_params(m, rng, 1.5);
  auto b = hand_batch({-1.0, -2.0}, {-1.0, -2.0}, {1.0, -1.0});

  CHECK(reference_kl(p, p, b) == doctest::Approx(0.0).epsilon(1e-14));

  PolicyParams ref = make_policy(m);  // uniform reference
  const auto probs = oracles::row_probs(p, 0);
  double hand = 0.0;
  for (double q : probs) hand += q * (std::log(q) - std::log(1.0 / 18));
  CHECK(reference_kl(p, ref, b) == doctest::Approx(hand).epsilon(1e-10));
  CHECK(reference_kl(p, ref, b) >= -1e-12);
}

TEST_CASE("total loss is zero at the reference with zero advantages") {
  ContextMap m;
  m.vocab_size = 18;
  m.position_buckets = 1;
  m.prompt_buckets = 1;
  PolicyParams p = make_policy(m);

  TokenBatch b;
  for (int i = 0; i < 6; ++i) {
    b.token.push_back(i % 3);
    b.context.push_back(0);
    b.rollout.push_back(i);
    b.logp_current.push_back(-std::log(18.0));
    b.logp_rollout.push_back(-std::log(18.0));
    b.logp_reference.push_back(-std::log(18.0));
    b.advantage.push_back(0.0);
    b.mask.push_back(1);
  }
  KlcovSettings s;
  auto gate = select_gate(covariances(b), s.top_k_fraction);
  auto loss = total_loss(p, p, b, gate, s);
  CHECK(loss.policy == doctest::Approx(0.0));
  CHECK(loss.klcov_penalty == doctest::Approx(0.0));
  CHECK(loss.reference_kl == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(loss.total == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("gamma zero plus empty gate leaves the mean clipped surrogate") {
  ContextMap m;
  m.vocab_size = 18;
  m.position_buckets = 1;
  m.prompt_buckets = 2;
  std::mt19937_64 rng(41);
  PolicyParams p = oracles::random_params(m, rng, 1.0);
  PolicyParams ref = oracles::random_params(m, rng, 1.0);

  TokenBatch b;
  for (int i = 0; i < 9; ++i) {
    const int ctx = static_cast<int>(rng() % m.num_contexts());
    const int tok = static_cast<int>(rng() % 18);
    b.token.push_back(tok);
    b.context.push_back(ctx);
    b.rollout.push_back(i / 3);
    b.logp_current.push_back(token_logprob(p, ctx, tok));
    b.logp_rollout.push_back(token_logprob(p, ctx, tok) - oracles::urand(rng, -0.3, 0.3));
    b.logp_reference.push_back(token_logprob(ref, ctx, tok));
    b.advantage.push_back(oracles::urand(rng, -2.0, 2.0));
    b.mask.push_back(1);
  }
  KlcovSettings s;
  s.gamma = 0.0;
  auto loss = total_loss(p, ref, b, {}, s);

  double mean = 0.0;
  for (int i = 0; i < b.size(); ++i)
    mean += clipped_surrogate(b.ratio(i), b.advantage[i], s.eps_clip);
  mean /= b.size();
  CHECK(loss.policy == doctest::Approx(mean).epsilon(1e-12));
  CHECK(loss.klcov_penalty == 0.0);
  CHECK(loss.total == doctest::Approx(mean).epsilon(1e-12));
}

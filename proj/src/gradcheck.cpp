#include "deskrl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "deskrl/errors.hpp"
#include "deskrl/klcov.hpp"
#include "deskrl/policy.hpp"

namespace deskrl {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// The loss has kinks at the clip edges, at ratio 1 (gated |log rho|), and at
// advantage 0; central differences near a kink measure the wrong slope.
// Sampled ratios keep a margin from all of them.
double safe_delta(std::mt19937_64& rng) {
  const double kink[] = {0.0, std::log(0.8), std::log(1.2)};
  for (;;) {
    const double d = uniform(rng, -0.35, 0.35);
    bool ok = true;
    for (double k : kink) ok = ok && std::fabs(d - k) > 0.01;
    if (ok) return d;
  }
}

PolicyParams random_policy(const ContextMap& map, std::mt19937_64& rng) {
  PolicyParams p = make_policy(map);
  for (double& w : p.w) w = uniform(rng, -1.5, 1.5);
  return p;
}

}  // namespace

GradCheckResult run_gradcheck(std::uint64_t seed, int n_configs, double tolerance) {
  if (n_configs < 1) throw ValidationError("gradcheck needs at least one configuration");
  std::mt19937_64 rng(seed);
  const double h = 1e-5;

  GradCheckResult result;
  for (int cfg_idx = 0; cfg_idx < n_configs; ++cfg_idx) {
    ContextMap map;
    map.vocab_size = 6 + static_cast<int>(rng() % 5);
    map.position_buckets = 1 + static_cast<int>(rng() % 2);
    map.prompt_buckets = 2 + static_cast<int>(rng() % 3);
    PolicyParams params = random_policy(map, rng);
    const PolicyParams ref = random_policy(map, rng);

    const int n = 12 + static_cast<int>(rng() % 19);
    TokenBatch b;
    for (int i = 0; i < n; ++i) {
      b.context.push_back(static_cast<int>(rng() % map.num_contexts()));
      b.token.push_back(static_cast<int>(rng() % map.vocab_size));
      b.rollout.push_back(i / 4);
      const double lp = token_logprob(params, b.context[i], b.token[i]);
      b.logp_current.push_back(lp);
      b.logp_rollout.push_back(lp - safe_delta(rng));
      b.logp_reference.push_back(token_logprob(ref, b.context[i], b.token[i]));
      double a = uniform(rng, -2.0, 2.0);
      if (std::fabs(a) < 0.1) a = (a < 0.0 ? -0.1 : 0.1);
      b.advantage.push_back(a);
      b.mask.push_back(1);
    }
    // force one token into each clip region: high ratio with positive
    // advantage and low ratio with negative advantage both take the clipped
    // branch of the surrogate
    b.logp_rollout[0] = b.logp_current[0] - std::log(1.5);
    b.advantage[0] = std::fabs(b.advantage[0]);
    b.logp_rollout[1] = b.logp_current[1] - std::log(0.5);
    b.advantage[1] = -std::fabs(b.advantage[1]);

    KlcovSettings settings;
    settings.top_k_fraction = 0.15;  // floor(0.15 n) >= 1 for n >= 12
    const std::vector<int> gate = select_gate(covariances(b), settings.top_k_fraction);
    if (gate.empty()) throw NumericalError("gradcheck failed to force a nonempty gate");

    const LossTerms terms = loss_terms(params, b, gate, settings);
    const std::vector<double> grad = loss_gradient(params, terms, &ref);

    std::set<int> touched;
    for (const auto& s : terms.sites) touched.insert(s.context);
    for (const auto& s : terms.kl_sites) touched.insert(s.context);

    for (int ctx : touched) {
      for (int v = 0; v < map.vocab_size; ++v) {
        const std::size_t idx = static_cast<std::size_t>(ctx) * map.vocab_size + v;
        const double keep = params.w[idx];
        params.w[idx] = keep + h;
        const double up = total_loss(params, ref, b, gate, settings).total;
        params.w[idx] = keep - h;
        const double down = total_loss(params, ref, b, gate, settings).total;
        params.w[idx] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double rel =
            std::fabs(fd - grad[idx]) / std::max({std::fabs(fd), std::fabs(grad[idx]), 1e-6});
        if (rel > result.max_rel_err) result.max_rel_err = rel;
      }
    }

    // rows the batch never touches must have exactly zero gradient
    int checked = 0;
    for (int ctx = 0; ctx < map.num_contexts() && checked < 5; ++ctx) {
      if (touched.count(ctx)) continue;
      ++checked;
      for (int v = 0; v < map.vocab_size; ++v) {
        if (grad[static_cast<std::size_t>(ctx) * map.vocab_size + v] != 0.0)
          throw NumericalError("nonzero gradient on an untouched parameter row");
      }
    }
    ++result.configs;
  }

  result.pass = result.max_rel_err < tolerance;
  std::ostringstream ss;
  ss << "configs=" << result.configs << " max_rel_err=" << result.max_rel_err
     << " tolerance=" << tolerance;
  result.detail = ss.str();
  return result;
}

}  // namespace deskrl

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "deskrl/policy.hpp"

namespace deskrl {

// Flattened completion tokens of one gradient step. Masked entries (mask=0)
// never enter means, ranks, or losses; N below always means the unmasked
// count. logp_current must be refreshed against the same theta every other
// quantity uses.
struct TokenBatch {
  std::vector<int> token;
  std::vector<int> context;
  std::vector<int> rollout;  // flat rollout index within the step
  std::vector<double> logp_current;
  std::vector<double> logp_rollout;
  std::vector<double> logp_reference;
  std::vector<double> advantage;
  std::vector<std::uint8_t> mask;

  int size() const { return static_cast<int>(token.size()); }
  int unmasked_count() const;
  double ratio(int i) const { return std::exp(logp_current[i] - logp_rollout[i]); }
};

struct CovReport {
  std::vector<double> covariance;  // 0 at masked entries
  double mean_logprob = 0.0;
  double mean_advantage = 0.0;
  std::vector<int> ranked;  // unmasked indices, covariance descending, ties by index
  int n_unmasked = 0;
};

struct KlcovSettings {
  double eps_clip = 0.2;
  double beta_cov = 0.05;
  double top_k_fraction = 0.02;
  double gamma = 0.005;
};

struct LossBreakdown {
  double policy = 0.0;         // mean surrogate part over unmasked tokens
  double klcov_penalty = 0.0;  // mean beta_cov * |log rho| part (gated tokens)
  double reference_kl = 0.0;   // unweighted mean KL(pi || ref) over positions
  double gamma = 0.0;
  double total = 0.0;  // policy + klcov_penalty + gamma * reference_kl
};

// -min(rho * A, clamp(rho, 1-eps, 1+eps) * A).
double clipped_surrogate(double rho, double advantage, double eps_clip);

// Centered cross-products (logp - mean_logp) * (A - mean_A) with batch means
// over unmasked tokens. Throws ValidationError when nothing is unmasked.
CovReport covariances(const TokenBatch& b);

// The floor(k * N) highest-covariance tokens, ties by ascending index.
// Returned sorted ascending.
std::vector<int> select_gate(const CovReport& report, double k);

// Per-token objective values: gated tokens use -rho*A + beta_cov*|log rho|,
// everything else the clipped surrogate. Masked entries are 0.
std::vector<double> per_token_loss(const TokenBatch& b, const std::vector<int>& gate,
                                   double eps_clip, double beta_cov);

// Exact full-distribution KL(pi_theta(.|ctx) || pi_ref(.|ctx)) averaged over
// unmasked positions, one term per occurrence.
double reference_kl(const PolicyParams& current, const PolicyParams& ref, const TokenBatch& b);

// Refreshes logp_current from `current`, then mean per-token loss plus
// gamma * reference_kl. The gate is a constant of the step: it is not
// re-derived here, so the value is a smooth function of W almost everywhere.
LossBreakdown total_loss(const PolicyParams& current, const PolicyParams& ref,
                         const TokenBatch& b, const std::vector<int>& gate,
                         const KlcovSettings& s);

// Differential of the same objective: per-token dloss/dlogprob coefficients
// (branch chosen at the operating point) plus one KL site per unmasked
// position, each weighted gamma/N.
LossTerms loss_terms(const PolicyParams& current, const TokenBatch& b,
                     const std::vector<int>& gate, const KlcovSettings& s);

// Which objective branch each token takes at the operating point.
enum class TokenBranch { unclipped, clipped, gated, masked };
std::vector<TokenBranch> classify_tokens(const TokenBatch& b, const std::vector<int>& gate,
                                         double eps_clip);

}  // namespace deskrl

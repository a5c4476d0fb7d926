#pragma once

#include <optional>
#include <vector>

#include "deskrl/advantage.hpp"
#include "deskrl/klcov.hpp"

namespace deskrl {

// Mean Shannon entropy (nats) of pi(.|ctx) over unmasked token positions.
double mean_token_entropy(const PolicyParams& p, const TokenBatch& b);

// Logprob-space split of the policy surrogate into reward channels.
// c_eff is the unclipped ratio for unclipped or gated tokens and the clipped
// ratio otherwise; channel losses are means of -c_eff * attr * mask. The
// global KL term and the gated |log rho| penalty stay out of the split.
struct ProbeReport {
  double cf_linear = 0.0;
  double cert_linear = 0.0;
  double policy_clip = 0.0;  // mean -c_eff * A over unmasked tokens
  double norm_cf = 0.0;      // masked L2 norm of d(cf_linear)/dlogprob
  double norm_cert = 0.0;
  double residual = 0.0;  // |w_cf*cf_linear + w_cert*cert_linear - policy_clip|
};

// attr_* are per-rollout attribution channels satisfying
// w.cf*attr_cf + w.cert*attr_cert == per-rollout advantage.
ProbeReport gradient_probe(const TokenBatch& b, const std::vector<int>& gate,
                           const std::vector<double>& attr_cf,
                           const std::vector<double>& attr_cert, const ChannelWeights& w,
                           double eps_clip);

// Accuracy-trajectory summary: peak, first step attaining it, first post-peak
// step below half the peak (if any), end/peak retention (1.0 when peak is 0).
struct StabilityStats {
  double peak = 0.0;
  int peak_step = 0;
  std::optional<int> collapse_step;
  double end = 0.0;
  double retention = 1.0;
};

// steps empty -> 1-based positions. Empty values -> ValidationError.
StabilityStats stability_stats(const std::vector<double>& values,
                               const std::vector<int>& steps = {});

}  // namespace deskrl

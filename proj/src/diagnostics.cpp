#include "deskrl/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "deskrl/errors.hpp"

namespace deskrl {

double mean_token_entropy(const PolicyParams& p, const TokenBatch& b) {
  const int n = b.unmasked_count();
  if (n == 0) throw ValidationError("entropy of an all-masked batch");
  double acc = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    acc += row_entropy(p, b.context[i]);
  }
  return acc / n;
}

ProbeReport gradient_probe(const TokenBatch& b, const std::vector<int>& gate,
                           const std::vector<double>& attr_cf,
                           const std::vector<double>& attr_cert, const ChannelWeights& w,
                           double eps_clip) {
  const int n = b.unmasked_count();
  if (n == 0) throw ValidationError("probe of an all-masked batch");
  const auto branch = classify_tokens(b, gate, eps_clip);

  ProbeReport r;
  double g2_cf = 0.0;
  double g2_cert = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    const int ro = b.rollout[i];
    if (ro < 0 || ro >= static_cast<int>(attr_cf.size()) ||
        ro >= static_cast<int>(attr_cert.size()))
      throw ValidationError("rollout index outside attribution channels");
    const double rho = b.ratio(i);
    const double c_eff =
        (branch[i] == TokenBranch::clipped) ? std::clamp(rho, 1.0 - eps_clip, 1.0 + eps_clip)
                                            : rho;
    r.cf_linear += -c_eff * attr_cf[ro];
    r.cert_linear += -c_eff * attr_cert[ro];
    r.policy_clip += -c_eff * b.advantage[i];
    // frozen coefficients move only through rho; clipped tokens are flat
    if (branch[i] != TokenBranch::clipped) {
      g2_cf += (rho * attr_cf[ro]) * (rho * attr_cf[ro]);
      g2_cert += (rho * attr_cert[ro]) * (rho * attr_cert[ro]);
    }
  }
  r.cf_linear /= n;
  r.cert_linear /= n;
  r.policy_clip /= n;
  r.norm_cf = std::sqrt(g2_cf) / n;
  r.norm_cert = std::sqrt(g2_cert) / n;
  r.residual = std::fabs(w.cf * r.cf_linear + w.cert * r.cert_linear - r.policy_clip);
  return r;
}

StabilityStats stability_stats(const std::vector<double>& values, const std::vector<int>& steps) {
  if (values.empty()) throw ValidationError("stability stats need at least one value");
  if (!steps.empty() && steps.size() != values.size())
    throw ValidationError("steps/values length mismatch");

  auto step_at = [&](std::size_t i) {
    return steps.empty() ? static_cast<int>(i) + 1 : steps[i];
  };

  StabilityStats st;
  std::size_t peak_idx = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > values[peak_idx]) peak_idx = i;
  }
  st.peak = values[peak_idx];
  st.peak_step = step_at(peak_idx);
  st.end = values.back();
  for (std::size_t i = peak_idx + 1; i < values.size(); ++i) {
    if (values[i] < 0.5 * st.peak) {
      st.collapse_step = step_at(i);
      break;
    }
  }
  st.retention = (st.peak == 0.0) ? 1.0 : st.end / st.peak;
  return st;
}

}  // namespace deskrl

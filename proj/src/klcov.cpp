#include "deskrl/klcov.hpp"

#include <algorithm>
#include <cmath>

#include "deskrl/errors.hpp"

namespace deskrl {

int TokenBatch::unmasked_count() const {
  int n = 0;
  for (std::uint8_t m : mask) n += (m != 0);
  return n;
}

namespace {

void check_shape(const TokenBatch& b) {
  const std::size_t n = b.token.size();
  if (b.context.size() != n || b.rollout.size() != n || b.logp_current.size() != n ||
      b.logp_rollout.size() != n || b.logp_reference.size() != n || b.advantage.size() != n ||
      b.mask.size() != n)
    throw ValidationError("token batch field lengths disagree");
}

bool in_gate(const std::vector<int>& gate, int i) {
  return std::binary_search(gate.begin(), gate.end(), i);
}

// Fresh temperature-1 logprobs of the batch tokens under p.
std::vector<double> refreshed_logprobs(const PolicyParams& p, const TokenBatch& b) {
  std::vector<double> lp(b.token.size());
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) {
      lp[i] = 0.0;
      continue;
    }
    lp[i] = token_logprob(p, b.context[i], b.token[i]);
  }
  return lp;
}

}  // namespace

double clipped_surrogate(double rho, double advantage, double eps_clip) {
  const double clipped = std::clamp(rho, 1.0 - eps_clip, 1.0 + eps_clip);
  return -std::min(rho * advantage, clipped * advantage);
}

CovReport covariances(const TokenBatch& b) {
  check_shape(b);
  CovReport r;
  r.n_unmasked = b.unmasked_count();
  if (r.n_unmasked == 0) throw ValidationError("covariance of an all-masked batch");

  double ml = 0.0;
  double ma = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    ml += b.logp_current[i];
    ma += b.advantage[i];
  }
  ml /= r.n_unmasked;
  ma /= r.n_unmasked;
  r.mean_logprob = ml;
  r.mean_advantage = ma;

  r.covariance.assign(b.size(), 0.0);
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    r.covariance[i] = (b.logp_current[i] - ml) * (b.advantage[i] - ma);
    r.ranked.push_back(i);
  }
  std::stable_sort(r.ranked.begin(), r.ranked.end(), [&r](int a, int c) {
    return r.covariance[a] > r.covariance[c];
  });
  return r;
}

std::vector<int> select_gate(const CovReport& report, double k) {
  if (k < 0.0 || !std::isfinite(k)) throw ValidationError("gate fraction must be >= 0");
  const auto take = static_cast<std::size_t>(std::floor(k * report.n_unmasked));
  std::vector<int> gate(report.ranked.begin(),
                        report.ranked.begin() + std::min(take, report.ranked.size()));
  std::sort(gate.begin(), gate.end());
  return gate;
}

std::vector<double> per_token_loss(const TokenBatch& b, const std::vector<int>& gate,
                                   double eps_clip, double beta_cov) {
  check_shape(b);
  std::vector<double> out(b.size(), 0.0);
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    const double rho = b.ratio(i);
    if (in_gate(gate, i)) {
      const double log_rho = b.logp_current[i] - b.logp_rollout[i];
      out[i] = -rho * b.advantage[i] + beta_cov * std::fabs(log_rho);
    } else {
      out[i] = clipped_surrogate(rho, b.advantage[i], eps_clip);
    }
  }
  return out;
}

double reference_kl(const PolicyParams& current, const PolicyParams& ref, const TokenBatch& b) {
  check_shape(b);
  const int n_unmasked = b.unmasked_count();
  if (n_unmasked == 0) throw ValidationError("reference KL of an all-masked batch");
  const int v = current.map.vocab_size;
  double acc = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    auto lp = row_logprobs(current, b.context[i]);
    auto lr = row_logprobs(ref, b.context[i]);
    double kl = 0.0;
    for (int t = 0; t < v; ++t) kl += std::exp(lp[t]) * (lp[t] - lr[t]);
    acc += kl;
  }
  return acc / n_unmasked;
}

LossBreakdown total_loss(const PolicyParams& current, const PolicyParams& ref,
                         const TokenBatch& b, const std::vector<int>& gate,
                         const KlcovSettings& s) {
  check_shape(b);
  const int n = b.unmasked_count();
  if (n == 0) throw ValidationError("loss of an all-masked batch");
  const auto lp = refreshed_logprobs(current, b);

  double policy = 0.0;
  double penalty = 0.0;
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    const double log_rho = lp[i] - b.logp_rollout[i];
    const double rho = std::exp(log_rho);
    if (in_gate(gate, i)) {
      policy += -rho * b.advantage[i];
      penalty += s.beta_cov * std::fabs(log_rho);
    } else {
      policy += clipped_surrogate(rho, b.advantage[i], s.eps_clip);
    }
  }

  LossBreakdown out;
  out.policy = policy / n;
  out.klcov_penalty = penalty / n;
  out.reference_kl = reference_kl(current, ref, b);
  out.gamma = s.gamma;
  out.total = out.policy + out.klcov_penalty + out.gamma * out.reference_kl;
  if (!std::isfinite(out.total)) throw NumericalError("non-finite loss");
  return out;
}

LossTerms loss_terms(const PolicyParams& current, const TokenBatch& b,
                     const std::vector<int>& gate, const KlcovSettings& s) {
  check_shape(b);
  const int n = b.unmasked_count();
  if (n == 0) throw ValidationError("loss terms of an all-masked batch");
  const auto lp = refreshed_logprobs(current, b);
  const double inv_n = 1.0 / n;

  LossTerms terms;
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    const double log_rho = lp[i] - b.logp_rollout[i];
    const double rho = std::exp(log_rho);
    const double a = b.advantage[i];
    double coeff;
    if (in_gate(gate, i)) {
      // d/dlogp of -rho*A + beta*|log rho|; subgradient 0 at the kink
      const double sgn = (log_rho > 0.0) ? 1.0 : (log_rho < 0.0 ? -1.0 : 0.0);
      coeff = -rho * a + s.beta_cov * sgn;
    } else {
      const double clipped = std::clamp(rho, 1.0 - s.eps_clip, 1.0 + s.eps_clip);
      // ties take the unclipped branch, whose d/dlogp is -rho*A
      coeff = (rho * a <= clipped * a) ? -rho * a : 0.0;
    }
    if (coeff != 0.0) terms.sites.push_back({b.context[i], b.token[i], coeff * inv_n});
    terms.kl_sites.push_back({b.context[i], s.gamma * inv_n});
  }
  return terms;
}

std::vector<TokenBranch> classify_tokens(const TokenBatch& b, const std::vector<int>& gate,
                                         double eps_clip) {
  check_shape(b);
  std::vector<TokenBranch> out(b.size(), TokenBranch::masked);
  for (int i = 0; i < b.size(); ++i) {
    if (!b.mask[i]) continue;
    if (in_gate(gate, i)) {
      out[i] = TokenBranch::gated;
      continue;
    }
    const double rho = b.ratio(i);
    const double clipped = std::clamp(rho, 1.0 - eps_clip, 1.0 + eps_clip);
    const double a = b.advantage[i];
    out[i] = (rho * a <= clipped * a) ? TokenBranch::unclipped : TokenBranch::clipped;
  }
  return out;
}

}  // namespace deskrl

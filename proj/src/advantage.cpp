#include "deskrl/advantage.hpp"

#include <cmath>

#include "deskrl/errors.hpp"

namespace deskrl {

namespace {

struct Moments {
  double mean;
  double stddev;  // population
};

Moments moments(const std::vector<double>& v) {
  double mu = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalError("non-finite reward value");
    mu += x;
  }
  mu /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  return {mu, std::sqrt(var)};
}

bool all_equal(const std::vector<double>& v) {
  for (double x : v)
    if (x != v[0]) return false;
  return true;
}

}  // namespace

std::vector<double> normalize_channel(const std::vector<double>& values, double epsilon) {
  if (values.empty()) throw ValidationError("cannot normalize an empty group");
  // exact zero for constant groups, dodging mean-roundoff blowup through 1/eps
  if (all_equal(values)) {
    if (!std::isfinite(values[0])) throw NumericalError("non-finite reward value");
    return std::vector<double>(values.size(), 0.0);
  }
  const Moments m = moments(values);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = (values[i] - m.mean) / (m.stddev + epsilon);
  return out;
}

std::vector<double> combine_advantages(const std::vector<double>& cf_norm,
                                       const std::vector<double>& cert_norm,
                                       const ChannelWeights& w) {
  if (cf_norm.size() != cert_norm.size())
    throw ValidationError("channel length mismatch");
  std::vector<double> out(cf_norm.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = w.cf * cf_norm[i] + w.cert * cert_norm[i];
  return out;
}

CombinedAdvantages per_channel_advantages(const RewardMatrix& r, const ChannelWeights& w,
                                          double epsilon) {
  CombinedAdvantages out;
  out.attr_cf = normalize_channel(r.cf, epsilon);
  out.attr_cert = normalize_channel(r.cert, epsilon);
  out.advantage = combine_advantages(out.attr_cf, out.attr_cert, w);
  return out;
}

CombinedAdvantages combine_then_normalize_advantages(const RewardMatrix& r,
                                                     const ChannelWeights& w, double epsilon) {
  if (r.cf.size() != r.cert.size()) throw ValidationError("channel length mismatch");
  std::vector<double> combined(r.cf.size());
  for (std::size_t i = 0; i < combined.size(); ++i)
    combined[i] = w.cf * r.cf[i] + w.cert * r.cert[i];

  CombinedAdvantages out;
  out.advantage = normalize_channel(combined, epsilon);
  out.attr_cf.assign(r.cf.size(), 0.0);
  out.attr_cert.assign(r.cf.size(), 0.0);
  if (all_equal(combined)) return out;  // advantage is identically zero

  const Moments mc = moments(combined);
  const Moments mcf = moments(r.cf);
  const Moments mct = moments(r.cert);
  const double scale = 1.0 / (mc.stddev + epsilon);
  for (std::size_t i = 0; i < combined.size(); ++i) {
    out.attr_cf[i] = (r.cf[i] - mcf.mean) * scale;
    out.attr_cert[i] = (r.cert[i] - mct.mean) * scale;
  }
  return out;
}

std::vector<double> single_channel_advantages(const std::vector<double>& raw, double epsilon) {
  return normalize_channel(raw, epsilon);
}

std::vector<double> broadcast_to_tokens(const std::vector<double>& advantages,
                                        const RolloutGroup& g) {
  if (static_cast<int>(advantages.size()) != g.size())
    throw ValidationError("advantage count does not match rollout count");
  std::vector<double> out;
  for (int i = 0; i < g.size(); ++i)
    out.insert(out.end(), g.completions[i].tokens.size(), advantages[i]);
  return out;
}

}  // namespace deskrl

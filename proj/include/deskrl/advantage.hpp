#pragma once

#include <vector>

#include "deskrl/rewards.hpp"

namespace deskrl {

struct ChannelWeights {
  double cf = 0.5;
  double cert = 0.5;
};

// Group z-score with population std: (x - mu) / (sigma + epsilon).
// Constant groups (and G = 1) map to exactly zero. Non-finite input throws
// NumericalError; empty input throws ValidationError.
std::vector<double> normalize_channel(const std::vector<double>& values, double epsilon);

// Elementwise w.cf * cf_norm + w.cert * cert_norm.
std::vector<double> combine_advantages(const std::vector<double>& cf_norm,
                                       const std::vector<double>& cert_norm,
                                       const ChannelWeights& w);

// Per-group advantages plus the attribution channels the gradient probe
// consumes. The identity w.cf * attr_cf + w.cert * attr_cert == advantage
// holds for both construction paths.
struct CombinedAdvantages {
  std::vector<double> advantage;
  std::vector<double> attr_cf;
  std::vector<double> attr_cert;
};

// Normalize each channel, then weight: attr channels are the z-scores.
CombinedAdvantages per_channel_advantages(const RewardMatrix& r, const ChannelWeights& w,
                                          double epsilon);

// Single z-score of the weighted raw sum. Attribution channels are the
// centered raw channels scaled by the shared combined z-score factor
// 1/(sigma_combined + epsilon); their weighted re-sum recovers the advantage
// up to mean roundoff.
CombinedAdvantages combine_then_normalize_advantages(const RewardMatrix& r,
                                                     const ChannelWeights& w, double epsilon);

// z-score of one raw channel; standard group-relative shaping.
std::vector<double> single_channel_advantages(const std::vector<double>& raw, double epsilon);

// Every completion token of rollout g carries advantages[g]. Returns one value
// per completion token, rollout-major, alongside the owning rollout index.
std::vector<double> broadcast_to_tokens(const std::vector<double>& advantages,
                                        const RolloutGroup& g);

}  // namespace deskrl

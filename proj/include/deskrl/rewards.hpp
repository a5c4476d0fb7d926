#pragma once

#include <vector>

#include "deskrl/policy.hpp"
#include "deskrl/task.hpp"

namespace deskrl {

// One prompt with its G sampled completions; the normalization unit.
struct RolloutGroup {
  Prompt prompt;
  std::vector<Completion> completions;
  int size() const { return static_cast<int>(completions.size()); }
};

struct ClusterStats {
  std::vector<int> cluster_of;    // rollout -> cluster id, -1 for unparseable
  std::vector<int> cluster_size;  // per cluster id
  int n_parseable = 0;
};

// Plurality voting: a parseable rollout scores |its equivalence cluster| / n_parseable;
// unparseable scores 0. n_parseable = 0 short-circuits to all zeros.
std::vector<double> cluster_rewards(const RolloutGroup& g, ClusterStats* stats = nullptr);

// 1 iff parseable.
std::vector<double> format_rewards(const RolloutGroup& g);

// Mean over completion tokens of KL(U || pi(.|prefix)) under `current`,
// closed form -log|V| - (1/|V|) * sum_v log pi(v|prefix). Prompt tokens never
// contribute.
double self_certainty(const PolicyParams& current, const Completion& c);
std::vector<double> self_certainty_rewards(const PolicyParams& current, const RolloutGroup& g);

// Single-context helper used by the closed-form identity tests.
double uniform_kl(const PolicyParams& p, int ctx);

// 1 iff parseable and equivalent to the prompt's ground truth.
std::vector<double> ground_truth_rewards(const RolloutGroup& g);

// cluster + format_weight * format, composed before any normalization.
std::vector<double> compose_cf_channel(const std::vector<double>& cluster,
                                       const std::vector<double>& format,
                                       double format_weight);

// Raw per-rollout channel values for one group.
struct RewardMatrix {
  std::vector<double> cf;    // cluster + format_weight * format
  std::vector<double> cert;  // self-certainty
  std::vector<double> gt;    // 0/1 correctness
};

}  // namespace deskrl

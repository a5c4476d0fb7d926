#include "deskrl/rewards.hpp"

#include <cmath>

#include "deskrl/errors.hpp"

namespace deskrl {

std::vector<double> cluster_rewards(const RolloutGroup& g, ClusterStats* stats) {
  const int n = g.size();
  ClusterStats local;
  ClusterStats& st = stats ? *stats : local;
  st.cluster_of.assign(n, -1);
  st.cluster_size.clear();
  st.n_parseable = 0;

  std::vector<ExtractedAnswer> reps;  // one representative answer per cluster
  for (int i = 0; i < n; ++i) {
    const ExtractedAnswer& a = g.completions[i].answer;
    if (!a.parseable) continue;
    ++st.n_parseable;
    int c = -1;
    for (std::size_t k = 0; k < reps.size(); ++k) {
      if (answers_equivalent(a, reps[k])) {
        c = static_cast<int>(k);
        break;
      }
    }
    if (c < 0) {
      c = static_cast<int>(reps.size());
      reps.push_back(a);
      st.cluster_size.push_back(0);
    }
    st.cluster_of[i] = c;
    ++st.cluster_size[c];
  }

  std::vector<double> r(n, 0.0);
  if (st.n_parseable == 0) return r;
  for (int i = 0; i < n; ++i) {
    if (st.cluster_of[i] >= 0)
      r[i] = static_cast<double>(st.cluster_size[st.cluster_of[i]]) / st.n_parseable;
  }
  return r;
}

std::vector<double> format_rewards(const RolloutGroup& g) {
  std::vector<double> r(g.size(), 0.0);
  for (int i = 0; i < g.size(); ++i)
    if (g.completions[i].answer.parseable) r[i] = 1.0;
  return r;
}

double self_certainty(const PolicyParams& current, const Completion& c) {
  if (c.tokens.empty()) throw ValidationError("empty completion has no certainty");
  const int n = current.map.vocab_size;
  const double log_v = std::log(static_cast<double>(n));
  double acc = 0.0;
  for (int ctx : c.contexts) {
    auto lp = row_logprobs(current, ctx);
    double s = 0.0;
    for (double x : lp) s += x;
    acc += -log_v - s / n;
  }
  const double out = acc / static_cast<double>(c.contexts.size());
  if (!std::isfinite(out) || out < -1e-12)
    throw NumericalError("self-certainty must be finite and non-negative");
  return out < 0.0 ? 0.0 : out;
}

std::vector<double> self_certainty_rewards(const PolicyParams& current, const RolloutGroup& g) {
  std::vector<double> r(g.size());
  for (int i = 0; i < g.size(); ++i) r[i] = self_certainty(current, g.completions[i]);
  return r;
}

double uniform_kl(const PolicyParams& p, int ctx) {
  const int n = p.map.vocab_size;
  auto lp = row_logprobs(p, ctx);
  double s = 0.0;
  for (double x : lp) s += x;
  return -std::log(static_cast<double>(n)) - s / n;
}

std::vector<double> ground_truth_rewards(const RolloutGroup& g) {
  ExtractedAnswer truth;
  truth.parseable = true;
  truth.value = g.prompt.ground_truth;
  std::vector<double> r(g.size(), 0.0);
  for (int i = 0; i < g.size(); ++i)
    if (answers_equivalent(g.completions[i].answer, truth)) r[i] = 1.0;
  return r;
}

std::vector<double> compose_cf_channel(const std::vector<double>& cluster,
                                       const std::vector<double>& format, double format_weight) {
  if (cluster.size() != format.size())
    throw ValidationError("cluster/format length mismatch");
  std::vector<double> out(cluster.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cluster[i] + format_weight * format[i];
  return out;
}

}  // namespace deskrl

#pragma once

#include <cstdint>
#include <vector>

#include "deskrl/task.hpp"

namespace deskrl {

// Context index = (prev_token * position_buckets + pos_bucket) * prompt_buckets
//               + prompt_bucket.
// Position bucket saturates at position_buckets-1, so the default B=1 is
// position-independent.
struct ContextMap {
  int vocab_size = 0;
  int position_buckets = 1;
  int prompt_buckets = 0;

  int num_contexts() const { return vocab_size * position_buckets * prompt_buckets; }
  int context(int prev_token, int position, int prompt_bucket) const;
  bool operator==(const ContextMap&) const = default;
};

// Dense logit table, row per context. Rows are softmax-normalized on read;
// entries must stay finite so every distribution is strictly positive.
struct PolicyParams {
  ContextMap map;
  std::vector<double> w;  // row-major [num_contexts][vocab_size]

  double* row(int ctx) { return w.data() + static_cast<std::size_t>(ctx) * map.vocab_size; }
  const double* row(int ctx) const {
    return w.data() + static_cast<std::size_t>(ctx) * map.vocab_size;
  }
};

PolicyParams make_policy(const ContextMap& map);  // zero logits (uniform rows)

// FNV-1a over the raw logit bytes; bitwise-stable snapshot digest.
std::uint64_t params_digest(const PolicyParams& p);

struct Completion {
  std::vector<int> tokens;       // ends with EOS when one was drawn
  std::vector<double> logprobs;  // temperature-1 logprobs under the sampling snapshot
  std::vector<int> contexts;     // context id at each position
  ExtractedAnswer answer;
};

// Row-level primitives. All softmax math is max-shifted; one shared
// logsumexp keeps token_logprob and row_logprobs bit-consistent.
std::vector<double> next_token_distribution(const PolicyParams& p, int ctx);
std::vector<double> row_logprobs(const PolicyParams& p, int ctx);
double token_logprob(const PolicyParams& p, int ctx, int token);
double row_entropy(const PolicyParams& p, int ctx);

// Draws tokens sequentially from temperature-scaled rows until EOS or max_len.
// Stored logprobs are the unscaled (temperature-1) values. greedy ignores
// temperature and takes the argmax, ties to the lowest index.
Completion sample_completion(const PolicyParams& snapshot, const Prompt& prompt,
                             const PromptBucketer& bucketer, double temperature,
                             int max_len, std::uint64_t rng_seed, bool greedy = false);

// Recomputes per-position logprobs of an existing completion under p.
std::vector<double> completion_logprobs(const PolicyParams& p, const Completion& c);

// Data-driven loss definition: the loss depends on W through per-site token
// logprobs and through full-row KL divergences against a fixed reference.
//   loss = sum_sites f_i(logprob(ctx_i, token_i)) + sum_kl w_j * KL(pi(.|ctx_j) || ref(.|ctx_j))
// Each site carries df_i/dlogprob evaluated at the operating point, which is
// all the chain rule needs.
struct LossTerms {
  struct Site {
    int context;
    int token;
    double dloss_dlogprob;
  };
  struct KlSite {
    int context;
    double weight;
  };
  std::vector<Site> sites;
  std::vector<KlSite> kl_sites;
};

// Exact analytic gradient, shaped like p.w. ref may be null when kl_sites is
// empty. Throws NumericalError on non-finite intermediates.
std::vector<double> loss_gradient(const PolicyParams& p, const LossTerms& terms,
                                  const PolicyParams* ref);

}  // namespace deskrl

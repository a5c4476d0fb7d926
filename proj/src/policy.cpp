#include "deskrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "deskrl/errors.hpp"

namespace deskrl {

int ContextMap::context(int prev_token, int position, int prompt_bucket) const {
  if (prev_token < 0 || prev_token >= vocab_size) throw ValidationError("prev_token out of range");
  if (prompt_bucket < 0 || prompt_bucket >= prompt_buckets)
    throw ValidationError("prompt_bucket out of range");
  int pos = position;
  if (pos < 0) throw ValidationError("position negative");
  if (pos >= position_buckets) pos = position_buckets - 1;
  return (prev_token * position_buckets + pos) * prompt_buckets + prompt_bucket;
}

PolicyParams make_policy(const ContextMap& map) {
  if (map.vocab_size <= 0 || map.position_buckets <= 0 || map.prompt_buckets <= 0)
    throw ValidationError("context map dimensions must be positive");
  PolicyParams p;
  p.map = map;
  p.w.assign(static_cast<std::size_t>(map.num_contexts()) * map.vocab_size, 0.0);
  return p;
}

std::uint64_t params_digest(const PolicyParams& p) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(&p.map.vocab_size, sizeof(int));
  mix(&p.map.position_buckets, sizeof(int));
  mix(&p.map.prompt_buckets, sizeof(int));
  if (!p.w.empty()) mix(p.w.data(), p.w.size() * sizeof(double));
  return h;
}

namespace {

// Max-shifted log(sum exp(w_i * inv_t)). Every logprob in the module flows
// through this one accumulation order.
double logsumexp_row(const double* w, int n, double inv_t, double* max_out) {
  double mx = w[0] * inv_t;
  for (int i = 1; i < n; ++i) mx = std::max(mx, w[i] * inv_t);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(w[i] * inv_t - mx);
  if (max_out) *max_out = mx;
  return mx + std::log(s);
}

}  // namespace

std::vector<double> row_logprobs(const PolicyParams& p, int ctx) {
  const int n = p.map.vocab_size;
  const double* w = p.row(ctx);
  const double lse = logsumexp_row(w, n, 1.0, nullptr);
  if (!std::isfinite(lse)) throw NumericalError("non-finite row normalizer");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = w[i] - lse;
  return out;
}

std::vector<double> next_token_distribution(const PolicyParams& p, int ctx) {
  auto lp = row_logprobs(p, ctx);
  for (auto& x : lp) x = std::exp(x);
  return lp;
}

double token_logprob(const PolicyParams& p, int ctx, int token) {
  const int n = p.map.vocab_size;
  if (token < 0 || token >= n) throw ValidationError("token out of range");
  const double* w = p.row(ctx);
  const double lse = logsumexp_row(w, n, 1.0, nullptr);
  if (!std::isfinite(lse)) throw NumericalError("non-finite row normalizer");
  return w[token] - lse;
}

double row_entropy(const PolicyParams& p, int ctx) {
  auto lp = row_logprobs(p, ctx);
  double h = 0.0;
  for (double x : lp) h -= std::exp(x) * x;
  return h;
}

namespace {

int draw_token(const double* w, int n, double inv_t, std::mt19937_64& rng) {
  double mx;
  const double lse = logsumexp_row(w, n, inv_t, &mx);
  if (!std::isfinite(lse)) throw NumericalError("non-finite sampling normalizer");
  // uniform in [0,1) with 53 random bits
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += std::exp(w[i] * inv_t - lse);
    if (u < acc) return i;
  }
  return n - 1;  // rounding slack lands on the last token
}

int argmax_token(const double* w, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (w[i] > w[best]) best = i;
  }
  return best;
}

}  // namespace

Completion sample_completion(const PolicyParams& snapshot, const Prompt& prompt,
                             const PromptBucketer& bucketer, double temperature, int max_len,
                             std::uint64_t rng_seed, bool greedy) {
  if (max_len <= 0) throw ValidationError("max_len must be positive");
  if (!greedy && temperature <= 0.0) throw ValidationError("temperature must be positive");
  Vocabulary vtmp;  // static helpers only, token strings unused here
  const int pb = bucketer.bucket(prompt.tokens, vtmp);
  const double inv_t = greedy ? 1.0 : 1.0 / temperature;
  std::mt19937_64 rng(rng_seed);

  Completion c;
  int prev = prompt.tokens.back();
  for (int pos = 0; pos < max_len; ++pos) {
    const int ctx = snapshot.map.context(prev, pos, pb);
    const double* w = snapshot.row(ctx);
    const int n = snapshot.map.vocab_size;
    const int tok =
        greedy ? argmax_token(w, n) : draw_token(w, n, inv_t, rng);
    c.tokens.push_back(tok);
    c.contexts.push_back(ctx);
    c.logprobs.push_back(token_logprob(snapshot, ctx, tok));
    if (tok == Vocabulary::kEos) break;
    prev = tok;
  }
  c.answer = extract_answer(c.tokens, vtmp);
  return c;
}

std::vector<double> completion_logprobs(const PolicyParams& p, const Completion& c) {
  if (c.tokens.size() != c.contexts.size())
    throw ValidationError("completion tokens/contexts length mismatch");
  std::vector<double> out(c.tokens.size());
  for (std::size_t i = 0; i < c.tokens.size(); ++i)
    out[i] = token_logprob(p, c.contexts[i], c.tokens[i]);
  return out;
}

std::vector<double> loss_gradient(const PolicyParams& p, const LossTerms& terms,
                                  const PolicyParams* ref) {
  std::vector<double> g(p.w.size(), 0.0);
  const int n = p.map.vocab_size;

  // d logprob(ctx, t) / d w[ctx][v] = onehot(t)_v - pi_v
  for (const auto& s : terms.sites) {
    if (s.dloss_dlogprob == 0.0) continue;
    auto pi = next_token_distribution(p, s.context);
    double* gr = g.data() + static_cast<std::size_t>(s.context) * n;
    for (int v = 0; v < n; ++v) {
      const double ind = (v == s.token) ? 1.0 : 0.0;
      gr[v] += s.dloss_dlogprob * (ind - pi[v]);
    }
  }

  // d KL(pi || ref) / d w[ctx][v] = pi_v * ((lp_v - lr_v) - KL)
  if (!terms.kl_sites.empty() && ref == nullptr)
    throw ValidationError("kl sites need a reference policy");
  for (const auto& s : terms.kl_sites) {
    if (s.weight == 0.0) continue;
    auto lp = row_logprobs(p, s.context);
    auto lr = row_logprobs(*ref, s.context);
    double kl = 0.0;
    for (int v = 0; v < n; ++v) kl += std::exp(lp[v]) * (lp[v] - lr[v]);
    double* gr = g.data() + static_cast<std::size_t>(s.context) * n;
    for (int v = 0; v < n; ++v)
      gr[v] += s.weight * std::exp(lp[v]) * ((lp[v] - lr[v]) - kl);
  }

  for (double x : g)
    if (!std::isfinite(x)) throw NumericalError("non-finite gradient entry");
  return g;
}

}  // namespace deskrl

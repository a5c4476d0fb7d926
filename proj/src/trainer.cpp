#include "deskrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "deskrl/errors.hpp"
#include "deskrl/rewards.hpp"
#include "deskrl/traces.hpp"

namespace deskrl {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double unit_double(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

std::vector<int> answer_digits(int answer) {
  std::string s = std::to_string(answer);
  std::vector<int> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(Vocabulary::digit_token(c - '0'));
  return out;
}

}  // namespace

std::uint64_t rollout_seed(std::uint64_t run_seed, int step, std::int64_t prompt_id, int g) {
  std::uint64_t h = splitmix64(run_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(step));
  h = splitmix64(h ^ static_cast<std::uint64_t>(prompt_id));
  h = splitmix64(h ^ static_cast<std::uint64_t>(g));
  return h;
}

Prompt training_prompt(const RunConfig& cfg, int pool_index) {
  const int ndiff = cfg.difficulty_max - cfg.difficulty_min + 1;
  const auto seed = static_cast<std::uint64_t>(pool_index);
  return generate_prompt(seed, cfg.difficulty_min + static_cast<int>(seed % ndiff));
}

std::vector<Prompt> make_eval_prompts(const RunConfig& cfg) {
  const int ndiff = cfg.difficulty_max - cfg.difficulty_min + 1;
  std::vector<Prompt> out;
  out.reserve(cfg.eval_prompt_count);
  for (int i = 0; i < cfg.eval_prompt_count; ++i) {
    const std::uint64_t seed = cfg.eval_seed_offset + static_cast<std::uint64_t>(i);
    out.push_back(generate_prompt(seed, cfg.difficulty_min + static_cast<int>(seed % ndiff)));
  }
  return out;
}

TrainState init_train_state(const RunConfig& cfg) {
  validate(cfg);
  TrainState st{cfg,
                make_vocabulary(cfg.filler_tokens),
                PromptBucketer(cfg.difficulty_min, cfg.difficulty_max),
                PolicyParams{},
                PolicyParams{},
                AdamState{},
                0,
                {}};

  ContextMap map;
  map.vocab_size = st.vocab.size();
  map.position_buckets = cfg.position_buckets;
  map.prompt_buckets = st.bucketer.num_buckets();
  st.params = make_policy(map);

  // Priming: walk every (prompt bucket, position bucket) pair and install the
  // grammar, answer, repetition, and jitter biases.
  const std::uint64_t jitter_salt = splitmix64(cfg.seed ^ 0x7E57'AB1E'0F15'CA1Eull);
  for (int pb = 0; pb < map.prompt_buckets; ++pb) {
    const auto decoded = st.bucketer.decode(pb);
    const auto digits = answer_digits(decoded.answer);
    for (int pos = 0; pos < map.position_buckets; ++pos) {
      auto at = [&](int prev) { return st.params.row(map.context(prev, pos, pb)); };

      at(Vocabulary::kEquals)[Vocabulary::kBoxOpen] += cfg.format_prior;
      double* open_row = at(Vocabulary::kBoxOpen);
      for (int d = 0; d < 10; ++d) {
        open_row[Vocabulary::digit_token(d)] += cfg.format_prior;
        const std::uint64_t h = splitmix64(splitmix64(jitter_salt ^ pb) ^ d);
        open_row[Vocabulary::digit_token(d)] += cfg.prior_jitter * unit_double(h);
      }
      open_row[digits.front()] += cfg.truth_prior;
      for (std::size_t i = 0; i + 1 < digits.size(); ++i)
        at(digits[i])[digits[i + 1]] += cfg.truth_prior;
      for (int d = 0; d < 10; ++d)
        at(Vocabulary::digit_token(d))[Vocabulary::kBoxClose] += cfg.format_prior;
      at(Vocabulary::kBoxClose)[Vocabulary::kEos] += cfg.format_prior;
      for (int q = Vocabulary::kFirstFiller; q < map.vocab_size; ++q)
        at(q)[q] += cfg.repeat_prior;
    }
  }

  st.reference = st.params;
  st.adam.m.assign(st.params.w.size(), 0.0);
  st.adam.v.assign(st.params.w.size(), 0.0);
  st.adam.t = 0;
  st.eval_prompts = make_eval_prompts(cfg);
  return st;
}

double lr_at(const RunConfig& cfg, int step_index) {
  const double warmup = cfg.warmup_ratio * cfg.max_steps;
  if (step_index < warmup && warmup > 0.0)
    return cfg.learning_rate * static_cast<double>(step_index) / warmup;
  const double span = cfg.max_steps - warmup;
  if (span <= 0.0) return cfg.learning_rate;
  const double progress = (static_cast<double>(step_index) - warmup) / span;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

StepBatch assemble_step_batch(const TrainState& state, int step_index) {
  const RunConfig& cfg = state.cfg;
  StepBatch b;

  for (int j = 0; j < cfg.batch_prompts; ++j) {
    const int pool_index =
        (step_index * cfg.batch_prompts + j) % cfg.train_prompt_count;
    b.prompts.push_back(training_prompt(cfg, pool_index));
  }

  double w_cf = 0.0;
  double w_cert = 0.0;
  cfg.effective_weights(&w_cf, &w_cert);
  const ChannelWeights w{w_cf, w_cert};
  const RewardMode mode = cfg.reward();

  int flat_rollout = 0;
  for (const auto& prompt : b.prompts) {
    RolloutGroup group;
    group.prompt = prompt;
    for (int g = 0; g < cfg.rollouts_per_prompt; ++g) {
      group.completions.push_back(sample_completion(
          state.params, prompt, state.bucketer, cfg.sampling_temperature,
          cfg.max_completion_length, rollout_seed(cfg.seed, step_index, prompt.id, g)));
    }

    RewardMatrix rm;
    rm.cf = compose_cf_channel(cluster_rewards(group), format_rewards(group),
                               cfg.format_weight);
    rm.cert = self_certainty_rewards(state.params, group);
    rm.gt = ground_truth_rewards(group);

    std::vector<double> adv;
    CombinedAdvantages combined;
    switch (mode) {
      case RewardMode::ground_truth:
        adv = single_channel_advantages(rm.gt, cfg.epsilon_norm);
        break;
      default:
        if (cfg.normalization() == NormMode::combine_then_normalize)
          combined = combine_then_normalize_advantages(rm, w, cfg.epsilon_norm);
        else
          combined = per_channel_advantages(rm, w, cfg.epsilon_norm);
        adv = combined.advantage;
        break;
    }

    for (int g = 0; g < cfg.rollouts_per_prompt; ++g) {
      const Completion& c = group.completions[g];
      b.advantage.push_back(adv[g]);
      if (mode != RewardMode::ground_truth) {
        b.attr_cf.push_back(combined.attr_cf[g]);
        b.attr_cert.push_back(combined.attr_cert[g]);
      }
      for (std::size_t t = 0; t < c.tokens.size(); ++t) {
        b.tokens.token.push_back(c.tokens[t]);
        b.tokens.context.push_back(c.contexts[t]);
        b.tokens.rollout.push_back(flat_rollout);
        b.tokens.logp_current.push_back(
            token_logprob(state.params, c.contexts[t], c.tokens[t]));
        b.tokens.logp_rollout.push_back(c.logprobs[t]);
        b.tokens.logp_reference.push_back(
            token_logprob(state.reference, c.contexts[t], c.tokens[t]));
        b.tokens.advantage.push_back(adv[g]);
        b.tokens.mask.push_back(1);
      }
      ++flat_rollout;
    }
    b.completions.insert(b.completions.end(), group.completions.begin(),
                         group.completions.end());
    b.rewards.push_back(std::move(rm));
  }

  if (cfg.klcov_enabled)
    b.gate = select_gate(covariances(b.tokens), cfg.top_k_fraction);
  return b;
}

double evaluate_greedy(const PolicyParams& params, const PromptBucketer& bucketer,
                       const Vocabulary& vocab, const std::vector<Prompt>& prompts,
                       int max_len) {
  if (prompts.empty()) throw ValidationError("evaluation prompt set is empty");
  int correct = 0;
  for (const auto& p : prompts) {
    const Completion c =
        sample_completion(params, p, bucketer, 1.0, max_len, 0, /*greedy=*/true);
    ExtractedAnswer truth;
    truth.parseable = true;
    truth.value = p.ground_truth;
    if (answers_equivalent(c.answer, truth)) ++correct;
    (void)vocab;
  }
  return static_cast<double>(correct) / static_cast<double>(prompts.size());
}

MetricsRecord apply_step(TrainState& state, int step_index, const StepBatch& batch) {
  const RunConfig& cfg = state.cfg;

  // Single-pass invariant: the batch was sampled from the parameters being
  // optimized, so every ratio is exactly 1 here.
  for (int i = 0; i < batch.tokens.size(); ++i) {
    if (batch.tokens.logp_current[i] != batch.tokens.logp_rollout[i])
      throw NumericalError("rollout policy differs from current policy at step " +
                           std::to_string(step_index + 1));
  }

  KlcovSettings settings{cfg.eps_clip, cfg.beta_cov, cfg.top_k_fraction, cfg.gamma};
  const LossBreakdown loss =
      total_loss(state.params, state.reference, batch.tokens, batch.gate, settings);
  const LossTerms terms = loss_terms(state.params, batch.tokens, batch.gate, settings);
  std::vector<double> grad = loss_gradient(state.params, terms, &state.reference);

  // Batch-describing metrics are scored against the pre-update parameters,
  // the same snapshot the batch was sampled from.
  const double batch_entropy = mean_token_entropy(state.params, batch.tokens);

  double norm2 = 0.0;
  for (double g : grad) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (norm > cfg.max_grad_norm && norm > 0.0) {
    const double scale = cfg.max_grad_norm / norm;
    for (double& g : grad) g *= scale;
  }

  const double lr = lr_at(cfg, step_index);
  state.adam.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.adam.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.adam.t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.adam.m[i] = cfg.adam_beta1 * state.adam.m[i] + (1.0 - cfg.adam_beta1) * grad[i];
    state.adam.v[i] =
        cfg.adam_beta2 * state.adam.v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
    const double mhat = state.adam.m[i] / bc1;
    const double vhat = state.adam.v[i] / bc2;
    state.params.w[i] -=
        lr * (mhat / (std::sqrt(vhat) + cfg.adam_epsilon) + cfg.weight_decay * state.params.w[i]);
    if (!std::isfinite(state.params.w[i]))
      throw NumericalError("non-finite parameter after update");
  }

  MetricsRecord rec;
  rec.step = step_index + 1;
  rec.loss_total = loss.total;
  rec.loss_policy = loss.policy;
  rec.loss_klcov_penalty = loss.klcov_penalty;
  rec.loss_ref_kl = loss.reference_kl;
  rec.mean_completion_length =
      static_cast<double>(batch.tokens.size()) / static_cast<double>(batch.completions.size());
  rec.mean_token_entropy = batch_entropy;

  double mean_cf = 0.0;
  double mean_cert = 0.0;
  double mean_gt = 0.0;
  int rollouts = 0;
  for (const auto& rm : batch.rewards) {
    for (double x : rm.cf) mean_cf += x;
    for (double x : rm.cert) mean_cert += x;
    for (double x : rm.gt) mean_gt += x;
    rollouts += static_cast<int>(rm.cf.size());
  }
  rec.reward_mean_cf = mean_cf / rollouts;
  rec.reward_mean_cert = mean_cert / rollouts;
  rec.reward_mean_gt = mean_gt / rollouts;
  rec.gate_size = static_cast<int>(batch.gate.size());

  if (cfg.reward() != RewardMode::ground_truth) {
    double w_cf = 0.0;
    double w_cert = 0.0;
    cfg.effective_weights(&w_cf, &w_cert);
    const ProbeReport probe = gradient_probe(batch.tokens, batch.gate, batch.attr_cf,
                                             batch.attr_cert, {w_cf, w_cert}, cfg.eps_clip);
    rec.probe_norm_cf = probe.norm_cf;
    rec.probe_norm_cert = probe.norm_cert;
    rec.probe_residual = probe.residual;
  }

  rec.heldout_accuracy = evaluate_greedy(state.params, state.bucketer, state.vocab,
                                         state.eval_prompts, cfg.max_completion_length);
  rec.learning_rate = lr;
  return rec;
}

MetricsRecord train_step(TrainState& state, int step_index) {
  const StepBatch batch = assemble_step_batch(state, step_index);
  return apply_step(state, step_index, batch);
}

void save_checkpoint(const std::string& path, const TrainState& state) {
  ordered_json j;
  j["config_digest"] = config_digest(state.cfg);
  j["step"] = state.step;
  j["adam_t"] = state.adam.t;
  j["w"] = state.params.w;
  j["adam_m"] = state.adam.m;
  j["adam_v"] = state.adam.v;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f << j.dump();
  f << '\n';
  if (!f) throw IoError("checkpoint write failed: " + path);
}

TrainState load_checkpoint(const std::string& path, const RunConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint: ") + e.what());
  }

  TrainState state = init_train_state(cfg);
  try {
    if (j.at("config_digest").get<std::uint64_t>() != config_digest(cfg))
      throw ValidationError("checkpoint was written under a different config: " + path);
    state.step = j.at("step").get<int>();
    state.adam.t = j.at("adam_t").get<std::int64_t>();
    state.params.w = j.at("w").get<std::vector<double>>();
    state.adam.m = j.at("adam_m").get<std::vector<double>>();
    state.adam.v = j.at("adam_v").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint: ") + e.what());
  }
  const std::size_t expect = state.reference.w.size();
  if (state.params.w.size() != expect || state.adam.m.size() != expect ||
      state.adam.v.size() != expect)
    throw ValidationError("checkpoint parameter shape does not match config: " + path);
  if (state.step < 0 || state.step > cfg.max_steps)
    throw ValidationError("checkpoint step outside the configured run: " + path);
  return state;
}

namespace {

std::string step_file(const std::string& dir, int step, const char* ext = ".json") {
  std::ostringstream ss;
  ss << dir << "/step_";
  ss.width(6);
  ss.fill('0');
  ss << step;
  ss << ext;
  return ss.str();
}

TraceSet batch_traces(const RunConfig& cfg, const StepBatch& batch) {
  TraceSet set;
  set.rollouts_per_prompt = cfg.rollouts_per_prompt;
  set.vocab_size = 18 + cfg.filler_tokens;
  int flat = 0;
  for (std::size_t p = 0; p < batch.prompts.size(); ++p) {
    TraceGroup g;
    g.prompt_id = batch.prompts[p].id;
    for (int r = 0; r < cfg.rollouts_per_prompt; ++r, ++flat) {
      const Completion& c = batch.completions[flat];
      TraceRecord rec;
      rec.prompt_id = g.prompt_id;
      rec.rollout_index = r;
      rec.tokens = c.tokens;
      rec.logp_current = c.logprobs;  // ratios are 1 on the single pass
      rec.logp_rollout = c.logprobs;
      rec.parseable = c.answer.parseable;
      if (c.answer.parseable) rec.answer = std::to_string(c.answer.value);
      rec.reward_cf = batch.rewards[p].cf[r];
      rec.reward_cert = batch.rewards[p].cert[r];
      rec.reward_gt = batch.rewards[p].gt[r];
      g.rollouts.push_back(std::move(rec));
    }
    set.groups.push_back(std::move(g));
  }
  return set;
}

void write_summary(const std::string& run_dir) {
  const auto recs = read_metrics(run_dir + "/metrics.jsonl");
  ordered_json j;
  j["steps"] = recs.empty() ? 0 : recs.back().step;
  j["final_heldout_accuracy"] = recs.empty() ? 0.0 : recs.back().heldout_accuracy;
  j["final_mean_token_entropy"] = recs.empty() ? 0.0 : recs.back().mean_token_entropy;
  j["final_mean_completion_length"] =
      recs.empty() ? 0.0 : recs.back().mean_completion_length;
  if (!recs.empty()) {
    std::vector<double> acc;
    std::vector<int> steps;
    for (const auto& r : recs) {
      acc.push_back(r.heldout_accuracy);
      steps.push_back(r.step);
    }
    const StabilityStats st = stability_stats(acc, steps);
    ordered_json s;
    s["peak"] = st.peak;
    s["peak_step"] = st.peak_step;
    s["collapse_step"] = st.collapse_step ? ordered_json(*st.collapse_step) : ordered_json(nullptr);
    s["end"] = st.end;
    s["retention"] = st.retention;
    j["accuracy_stability"] = std::move(s);
  }
  std::ofstream f(run_dir + "/summary.json", std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + run_dir + "/summary.json");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + run_dir + "/summary.json");
}

void run_loop(TrainState& state, const std::string& run_dir, MetricsWriter& writer,
              int halt_after_step) {
  const RunConfig& cfg = state.cfg;
  for (int i = state.step; i < cfg.max_steps; ++i) {
    const StepBatch batch = assemble_step_batch(state, i);
    MetricsRecord rec;
    try {
      rec = apply_step(state, i, batch);
    } catch (const IoError& e) {
      throw IoError("step " + std::to_string(i + 1) + ": " + e.what());
    }
    writer.append(rec);
    state.step = i + 1;
    if (cfg.trace_export_interval > 0 && state.step % cfg.trace_export_interval == 0) {
      fs::create_directories(run_dir + "/traces");
      export_traces(step_file(run_dir + "/traces", state.step, ".jsonl"),
                    batch_traces(cfg, batch));
    }
    if (state.step % cfg.checkpoint_interval == 0)
      save_checkpoint(step_file(run_dir + "/checkpoints", state.step), state);
    if (halt_after_step > 0 && state.step >= halt_after_step) break;
  }
  write_summary(run_dir);
}

}  // namespace

void run(const RunConfig& cfg, const std::string& run_dir, int halt_after_step) {
  TrainState state = init_train_state(cfg);
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  fs::create_directories(run_dir + "/checkpoints", ec);
  if (!fs::is_directory(run_dir) || !fs::is_directory(run_dir + "/checkpoints"))
    throw IoError("cannot create run directory: " + run_dir);
  save_config(run_dir + "/config.json", cfg);
  write_prompt_set(run_dir + "/eval_prompts.jsonl", state.eval_prompts);
  save_checkpoint(step_file(run_dir + "/checkpoints", 0), state);
  MetricsWriter writer(run_dir + "/metrics.jsonl", /*truncate=*/true);
  run_loop(state, run_dir, writer, halt_after_step);
}

void resume(const std::string& run_dir, int halt_after_step) {
  const RunConfig cfg = load_config(run_dir + "/config.json");

  int latest = -1;
  const std::string ckpt_dir = run_dir + "/checkpoints";
  if (!fs::is_directory(ckpt_dir)) throw IoError("no checkpoint directory in " + run_dir);
  for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() == 16 && name.rfind("step_", 0) == 0 &&
        name.compare(11, 5, ".json") == 0)
      latest = std::max(latest, std::stoi(name.substr(5, 6)));
  }
  if (latest < 0) throw IoError("no checkpoints found in " + ckpt_dir);

  TrainState state = load_checkpoint(step_file(ckpt_dir, latest), cfg);

  // Drop metrics rows past the checkpoint; the loop regenerates them so the
  // final log is byte-identical to an uninterrupted run.
  std::vector<std::string> kept;
  {
    std::ifstream f(run_dir + "/metrics.jsonl");
    std::string line;
    while (f && std::getline(f, line)) {
      if (line.empty()) continue;
      MetricsRecord rec;
      try {
        rec = metrics_from_line(line);
      } catch (const IoError&) {
        break;
      }
      if (rec.step > state.step) break;
      kept.push_back(line);
    }
  }
  {
    std::ofstream f(run_dir + "/metrics.jsonl", std::ios::trunc);
    if (!f) throw IoError("cannot rewrite metrics log in " + run_dir);
    for (const auto& line : kept) f << line << '\n';
  }

  MetricsWriter writer(run_dir + "/metrics.jsonl", /*truncate=*/false);
  run_loop(state, run_dir, writer, halt_after_step);
}

}  // namespace deskrl

#include "deskrl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deskrl/errors.hpp"

namespace deskrl {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string to_string(RewardMode m) {
  switch (m) {
    case RewardMode::multi: return "multi";
    case RewardMode::cluster_only: return "cluster_only";
    case RewardMode::cert_only: return "cert_only";
    case RewardMode::ground_truth: return "ground_truth";
  }
  throw ValidationError("bad reward mode value");
}

std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::per_channel: return "per_channel";
    case NormMode::combine_then_normalize: return "combine_then_normalize";
    case NormMode::ground_truth_single: return "ground_truth_single";
  }
  throw ValidationError("bad normalization mode value");
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "multi") return RewardMode::multi;
  if (s == "cluster_only") return RewardMode::cluster_only;
  if (s == "cert_only") return RewardMode::cert_only;
  if (s == "ground_truth") return RewardMode::ground_truth;
  throw ValidationError("unknown reward_mode: " + s);
}

NormMode norm_mode_from_string(const std::string& s) {
  if (s == "per_channel") return NormMode::per_channel;
  if (s == "combine_then_normalize") return NormMode::combine_then_normalize;
  if (s == "ground_truth_single") return NormMode::ground_truth_single;
  throw ValidationError("unknown normalization_mode: " + s);
}

RewardMode RunConfig::reward() const { return reward_mode_from_string(reward_mode); }
NormMode RunConfig::normalization() const { return norm_mode_from_string(normalization_mode); }

void RunConfig::effective_weights(double* w_cf, double* w_cert) const {
  switch (reward()) {
    case RewardMode::multi:
      *w_cf = weight_cluster;
      *w_cert = weight_cert;
      break;
    case RewardMode::cluster_only:
      *w_cf = 1.0;
      *w_cert = 0.0;
      break;
    case RewardMode::cert_only:
      *w_cf = 0.0;
      *w_cert = 1.0;
      break;
    case RewardMode::ground_truth:
      *w_cf = 1.0;  // single channel; normalization mode decides the rest
      *w_cert = 0.0;
      break;
  }
}

namespace {

// Field table: one place to name every key for parse, serialize and digest.
template <typename Fn>
void for_each_field(Fn&& fn) {
  fn("difficulty_min", &RunConfig::difficulty_min);
  fn("difficulty_max", &RunConfig::difficulty_max);
  fn("filler_tokens", &RunConfig::filler_tokens);
  fn("train_prompt_count", &RunConfig::train_prompt_count);
  fn("eval_prompt_count", &RunConfig::eval_prompt_count);
  fn("eval_seed_offset", &RunConfig::eval_seed_offset);
  fn("rollouts_per_prompt", &RunConfig::rollouts_per_prompt);
  fn("sampling_temperature", &RunConfig::sampling_temperature);
  fn("max_completion_length", &RunConfig::max_completion_length);
  fn("batch_prompts", &RunConfig::batch_prompts);
  fn("eps_clip", &RunConfig::eps_clip);
  fn("gamma", &RunConfig::gamma);
  fn("weight_cluster", &RunConfig::weight_cluster);
  fn("weight_cert", &RunConfig::weight_cert);
  fn("format_weight", &RunConfig::format_weight);
  fn("beta_cov", &RunConfig::beta_cov);
  fn("top_k_fraction", &RunConfig::top_k_fraction);
  fn("epsilon_norm", &RunConfig::epsilon_norm);
  fn("reward_mode", &RunConfig::reward_mode);
  fn("normalization_mode", &RunConfig::normalization_mode);
  fn("klcov_enabled", &RunConfig::klcov_enabled);
  fn("learning_rate", &RunConfig::learning_rate);
  fn("warmup_ratio", &RunConfig::warmup_ratio);
  fn("adam_beta1", &RunConfig::adam_beta1);
  fn("adam_beta2", &RunConfig::adam_beta2);
  fn("adam_epsilon", &RunConfig::adam_epsilon);
  fn("weight_decay", &RunConfig::weight_decay);
  fn("max_grad_norm", &RunConfig::max_grad_norm);
  fn("max_steps", &RunConfig::max_steps);
  fn("checkpoint_interval", &RunConfig::checkpoint_interval);
  fn("seed", &RunConfig::seed);
  fn("position_buckets", &RunConfig::position_buckets);
  fn("trace_export_interval", &RunConfig::trace_export_interval);
  fn("format_prior", &RunConfig::format_prior);
  fn("truth_prior", &RunConfig::truth_prior);
  fn("repeat_prior", &RunConfig::repeat_prior);
  fn("prior_jitter", &RunConfig::prior_jitter);
}

void require_positive(const char* key, double v) {
  if (!(v > 0.0)) throw ValidationError(std::string(key) + " must be > 0");
}

void require_nonneg(const char* key, double v) {
  if (!(v >= 0.0)) throw ValidationError(std::string(key) + " must be >= 0");
}

void require_unit(const char* key, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(key) + " must be in [0,1]");
}

}  // namespace

void validate(const RunConfig& c) {
  if (c.difficulty_min < 1 || c.difficulty_max > 3 || c.difficulty_min > c.difficulty_max)
    throw ValidationError("difficulty range must satisfy 1 <= min <= max <= 3");
  if (c.filler_tokens < 0) throw ValidationError("filler_tokens must be >= 0");
  if (18 + c.filler_tokens < 16) throw ValidationError("vocabulary too small");
  if (c.train_prompt_count < 1) throw ValidationError("train_prompt_count must be >= 1");
  if (c.eval_prompt_count < 1) throw ValidationError("eval_prompt_count must be >= 1");
  if (c.rollouts_per_prompt < 2)
    throw ValidationError("rollouts_per_prompt must be >= 2 for group normalization");
  require_positive("sampling_temperature", c.sampling_temperature);
  if (c.max_completion_length < 1) throw ValidationError("max_completion_length must be >= 1");
  if (c.batch_prompts < 1) throw ValidationError("batch_prompts must be >= 1");
  require_unit("eps_clip", c.eps_clip);
  require_positive("eps_clip", c.eps_clip);
  require_nonneg("gamma", c.gamma);
  require_nonneg("weight_cluster", c.weight_cluster);
  require_nonneg("weight_cert", c.weight_cert);
  if (c.weight_cluster + c.weight_cert <= 0.0)
    throw ValidationError("channel weights must not both be zero");
  require_nonneg("format_weight", c.format_weight);
  require_nonneg("beta_cov", c.beta_cov);
  require_unit("top_k_fraction", c.top_k_fraction);
  require_positive("epsilon_norm", c.epsilon_norm);
  reward_mode_from_string(c.reward_mode);
  norm_mode_from_string(c.normalization_mode);
  if (c.reward() == RewardMode::ground_truth &&
      c.normalization() != NormMode::ground_truth_single)
    throw ValidationError("ground_truth rewards require ground_truth_single normalization");
  if (c.reward() != RewardMode::ground_truth &&
      c.normalization() == NormMode::ground_truth_single)
    throw ValidationError("ground_truth_single normalization requires ground_truth rewards");
  require_positive("learning_rate", c.learning_rate);
  require_unit("warmup_ratio", c.warmup_ratio);
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0))
    throw ValidationError("adam_beta1 must be in [0,1)");
  if (!(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0))
    throw ValidationError("adam_beta2 must be in [0,1)");
  require_positive("adam_epsilon", c.adam_epsilon);
  require_nonneg("weight_decay", c.weight_decay);
  require_positive("max_grad_norm", c.max_grad_norm);
  if (c.max_steps < 0) throw ValidationError("max_steps must be >= 0");
  if (c.checkpoint_interval < 1) throw ValidationError("checkpoint_interval must be >= 1");
  if (c.position_buckets < 1) throw ValidationError("position_buckets must be >= 1");
  if (c.trace_export_interval < 0) throw ValidationError("trace_export_interval must be >= 0");
  require_nonneg("format_prior", c.format_prior);
  require_nonneg("truth_prior", c.truth_prior);
  require_nonneg("repeat_prior", c.repeat_prior);
  require_nonneg("prior_jitter", c.prior_jitter);
}

RunConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config root must be a JSON object");

  RunConfig c;
  std::size_t known = 0;
  for_each_field([&](const char* key, auto member) {
    auto it = j.find(key);
    if (it == j.end()) return;
    ++known;
    try {
      c.*member = it->get<std::decay_t<decltype(c.*member)>>();
    } catch (const json::exception&) {
      throw ValidationError(std::string("config key has wrong type: ") + key);
    }
  });
  if (known != j.size()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool hit = false;
      for_each_field([&](const char* key, auto) { hit |= (it.key() == key); });
      if (!hit) throw ValidationError("unknown config key: " + it.key());
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  ordered_json j;
  std::vector<std::pair<std::string, ordered_json>> fields;
  for_each_field([&](const char* key, auto member) { fields.emplace_back(key, c.*member); });
  std::sort(fields.begin(), fields.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [k, v] : fields) j[k] = std::move(v);
  return j.dump(2) + "\n";
}

void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << serialize_config(c);
  if (!f) throw IoError("write failed: " + path);
}

std::uint64_t config_digest(const RunConfig& c) {
  const std::string s = serialize_config(c);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char b : s) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace deskrl

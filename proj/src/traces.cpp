#include "deskrl/traces.hpp"

#include <fstream>

#include <json.hpp>

#include "deskrl/advantage.hpp"
#include "deskrl/errors.hpp"
#include "deskrl/klcov.hpp"
#include "deskrl/rewards.hpp"

namespace deskrl {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json record_to_json(const TraceRecord& r) {
  ordered_json j;
  j["prompt_id"] = r.prompt_id;
  j["rollout_index"] = r.rollout_index;
  j["tokens"] = r.tokens;
  j["logp_current"] = r.logp_current;
  j["logp_rollout"] = r.logp_rollout;
  j["parseable"] = r.parseable;
  j["answer"] = r.answer;
  j["reward_cf"] = r.reward_cf ? ordered_json(*r.reward_cf) : ordered_json(nullptr);
  j["reward_cert"] = r.reward_cert ? ordered_json(*r.reward_cert) : ordered_json(nullptr);
  j["reward_gt"] = r.reward_gt ? ordered_json(*r.reward_gt) : ordered_json(nullptr);
  return j;
}

TraceRecord record_from_json(const ordered_json& j) {
  TraceRecord r;
  r.prompt_id = j.at("prompt_id").get<std::int64_t>();
  r.rollout_index = j.at("rollout_index").get<int>();
  r.tokens = j.at("tokens").get<std::vector<int>>();
  r.logp_current = j.at("logp_current").get<std::vector<double>>();
  r.logp_rollout = j.at("logp_rollout").get<std::vector<double>>();
  r.parseable = j.at("parseable").get<bool>();
  r.answer = j.at("answer").get<std::string>();
  if (!j.at("reward_cf").is_null()) r.reward_cf = j.at("reward_cf").get<double>();
  if (!j.at("reward_cert").is_null()) r.reward_cert = j.at("reward_cert").get<double>();
  if (!j.at("reward_gt").is_null()) r.reward_gt = j.at("reward_gt").get<double>();
  return r;
}

ExtractedAnswer stored_answer(const TraceRecord& r) {
  ExtractedAnswer a;
  if (!r.parseable) return a;
  if (r.answer.empty()) throw ValidationError("parseable trace with empty answer string");
  for (char c : r.answer)
    if (c < '0' || c > '9')
      throw ValidationError("trace answer is not a digit string: " + r.answer);
  a.parseable = true;
  a.value = std::stoll(r.answer);
  return a;
}

}  // namespace

void export_traces(const std::string& path, const TraceSet& set) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  ordered_json header;
  header["rollouts_per_prompt"] = set.rollouts_per_prompt;
  header["vocab_size"] = set.vocab_size;
  f << header.dump() << '\n';
  for (const auto& g : set.groups)
    for (const auto& r : g.rollouts) f << record_to_json(r).dump() << '\n';
  if (!f) throw IoError("write failed: " + path);
}

TraceSet import_traces(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("trace file is empty: " + path);

  TraceSet set;
  try {
    ordered_json header = ordered_json::parse(line);
    set.rollouts_per_prompt = header.at("rollouts_per_prompt").get<int>();
    set.vocab_size = header.at("vocab_size").get<int>();
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("bad trace header: ") + e.what());
  }
  if (set.rollouts_per_prompt < 1) throw ValidationError("trace header: rollouts_per_prompt < 1");
  if (set.vocab_size < 1) throw ValidationError("trace header: vocab_size < 1");

  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    TraceRecord r;
    try {
      r = record_from_json(ordered_json::parse(line));
    } catch (const ordered_json::exception& e) {
      throw IoError("bad trace record at line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string who = "prompt " + std::to_string(r.prompt_id);
    if (r.tokens.empty()) throw ValidationError(who + ": empty rollout");
    if (r.tokens.size() != r.logp_current.size() || r.tokens.size() != r.logp_rollout.size())
      throw ValidationError(who + ": token/logprob length mismatch");
    for (int t : r.tokens)
      if (t < 0 || t >= set.vocab_size) throw ValidationError(who + ": token outside vocabulary");

    if (set.groups.empty() || set.groups.back().prompt_id != r.prompt_id) {
      for (const auto& g : set.groups)
        if (g.prompt_id == r.prompt_id)
          throw ValidationError(who + ": rollouts are not contiguous");
      set.groups.push_back({r.prompt_id, {}});
    }
    auto& g = set.groups.back();
    if (r.rollout_index != static_cast<int>(g.rollouts.size()))
      throw ValidationError(who + ": rollout_index out of order, expected " +
                            std::to_string(g.rollouts.size()));
    g.rollouts.push_back(std::move(r));
  }

  if (set.groups.empty()) throw ValidationError("trace file holds no rollouts");
  for (const auto& g : set.groups) {
    if (static_cast<int>(g.rollouts.size()) != set.rollouts_per_prompt)
      throw ValidationError("prompt " + std::to_string(g.prompt_id) + ": expected " +
                            std::to_string(set.rollouts_per_prompt) + " rollouts, got " +
                            std::to_string(g.rollouts.size()));
  }
  return set;
}

ScoredTraces score_traces(const TraceSet& set, const RunConfig& cfg) {
  validate(cfg);
  double w_cf = 0.0;
  double w_cert = 0.0;
  cfg.effective_weights(&w_cf, &w_cert);
  const RewardMode mode = cfg.reward();

  ScoredTraces out;
  TokenBatch batch;
  int flat_rollout = 0;

  for (const auto& g : set.groups) {
    const int n = static_cast<int>(g.rollouts.size());

    // cluster/format rerun the online scoring code over the stored answers
    RolloutGroup shim;
    shim.completions.resize(n);
    for (int i = 0; i < n; ++i) shim.completions[i].answer = stored_answer(g.rollouts[i]);

    RewardMatrix rm;
    rm.cf = compose_cf_channel(cluster_rewards(shim), format_rewards(shim), cfg.format_weight);
    rm.cert.assign(n, 0.0);
    rm.gt.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      const auto& r = g.rollouts[i];
      if (w_cert > 0.0) {
        if (!r.reward_cert)
          throw ValidationError("prompt " + std::to_string(g.prompt_id) +
                                ": cert reward required but absent from trace");
        rm.cert[i] = *r.reward_cert;
      }
      if (mode == RewardMode::ground_truth) {
        if (!r.reward_gt)
          throw ValidationError("prompt " + std::to_string(g.prompt_id) +
                                ": ground-truth reward required but absent from trace");
        rm.gt[i] = *r.reward_gt;
      }
    }

    std::vector<double> adv;
    const ChannelWeights w{w_cf, w_cert};
    switch (mode) {
      case RewardMode::ground_truth:
        adv = single_channel_advantages(rm.gt, cfg.epsilon_norm);
        break;
      default:
        if (cfg.normalization() == NormMode::combine_then_normalize)
          adv = combine_then_normalize_advantages(rm, w, cfg.epsilon_norm).advantage;
        else
          adv = per_channel_advantages(rm, w, cfg.epsilon_norm).advantage;
        break;
    }

    for (int i = 0; i < n; ++i) {
      out.prompt_id.push_back(g.prompt_id);
      out.rollout_index.push_back(g.rollouts[i].rollout_index);
      out.advantage.push_back(adv[i]);
      const auto& r = g.rollouts[i];
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        batch.token.push_back(r.tokens[t]);
        batch.context.push_back(0);  // unused offline; gating needs no contexts
        batch.rollout.push_back(flat_rollout);
        batch.logp_current.push_back(r.logp_current[t]);
        batch.logp_rollout.push_back(r.logp_rollout[t]);
        batch.logp_reference.push_back(0.0);
        batch.advantage.push_back(adv[i]);
        batch.mask.push_back(1);
      }
      ++flat_rollout;
    }
  }

  out.gate_mask.resize(flat_rollout);
  std::vector<std::uint8_t> flat_gate(batch.size(), 0);
  if (cfg.klcov_enabled) {
    const CovReport rep = covariances(batch);
    for (int i : select_gate(rep, cfg.top_k_fraction)) flat_gate[i] = 1;
  }
  int pos = 0;
  for (int r = 0; r < flat_rollout; ++r) {
    while (pos < batch.size() && batch.rollout[pos] == r) {
      out.gate_mask[r].push_back(flat_gate[pos]);
      ++pos;
    }
  }
  return out;
}

void write_scored_traces(const std::string& path, const ScoredTraces& s) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (std::size_t i = 0; i < s.advantage.size(); ++i) {
    ordered_json j;
    j["prompt_id"] = s.prompt_id[i];
    j["rollout_index"] = s.rollout_index[i];
    j["advantage"] = s.advantage[i];
    j["gate_mask"] = s.gate_mask[i];
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace deskrl

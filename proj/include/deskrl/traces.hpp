#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deskrl/config.hpp"

namespace deskrl {

// Sidecar protocol: rollouts with enough information to rerun
// rewards -> advantages -> gating without a live policy. Full distributions
// are not exported, so the cert channel is only usable when precomputed
// values travel with the record.
struct TraceRecord {
  std::int64_t prompt_id = 0;
  int rollout_index = 0;
  std::vector<int> tokens;
  std::vector<double> logp_current;
  std::vector<double> logp_rollout;
  bool parseable = false;
  std::string answer;  // canonical digit string, empty when unparseable
  std::optional<double> reward_cf;
  std::optional<double> reward_cert;
  std::optional<double> reward_gt;
};

struct TraceGroup {
  std::int64_t prompt_id = 0;
  std::vector<TraceRecord> rollouts;  // rollout_index order
};

struct TraceSet {
  int rollouts_per_prompt = 0;
  int vocab_size = 0;
  std::vector<TraceGroup> groups;
};

void export_traces(const std::string& path, const TraceSet& set);

// Validates the header, grouping, rollout counts (errors name the prompt id),
// and per-record token/logprob length agreement.
TraceSet import_traces(const std::string& path);

// Offline scoring: cluster/format recomputed from stored answers, cert taken
// from precomputed fields (required by modes that weight it), advantages per
// the config's modes, covariance gate from stored current-policy logprobs.
struct ScoredTraces {
  std::vector<std::int64_t> prompt_id;       // per rollout, group-major
  std::vector<int> rollout_index;            // per rollout
  std::vector<double> advantage;             // per rollout
  std::vector<std::vector<std::uint8_t>> gate_mask;  // per rollout, per token
};

ScoredTraces score_traces(const TraceSet& set, const RunConfig& cfg);
void write_scored_traces(const std::string& path, const ScoredTraces& s);

}  // namespace deskrl

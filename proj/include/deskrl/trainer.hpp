#pragma once

#include <string>
#include <vector>

#include "deskrl/advantage.hpp"
#include "deskrl/config.hpp"
#include "deskrl/diagnostics.hpp"
#include "deskrl/klcov.hpp"
#include "deskrl/metrics.hpp"

namespace deskrl {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
};

struct TrainState {
  RunConfig cfg;
  Vocabulary vocab;
  PromptBucketer bucketer;
  PolicyParams params;
  PolicyParams reference;  // frozen at step 0
  AdamState adam;
  int step = 0;  // completed steps
  std::vector<Prompt> eval_prompts;
};

TrainState init_train_state(const RunConfig& cfg);

// Linear warmup from 0 over warmup_ratio*max_steps, cosine decay to 0 after.
// step_index is 0-based.
double lr_at(const RunConfig& cfg, int step_index);

// Everything a step derives before touching the optimizer. Exposed so tests
// can score the same batch through independent oracles.
struct StepBatch {
  std::vector<Prompt> prompts;
  std::vector<Completion> completions;  // batch_prompts * G, group-major
  std::vector<RewardMatrix> rewards;    // per group
  std::vector<double> advantage;        // per rollout, flat
  std::vector<double> attr_cf;          // empty in ground_truth mode
  std::vector<double> attr_cert;
  TokenBatch tokens;
  std::vector<int> gate;
};

StepBatch assemble_step_batch(const TrainState& state, int step_index);

// Loss, gradient, optimizer update, metrics. Asserts the single-pass
// invariant (rho == 1 at assembly) and throws NumericalError on non-finite
// loss or gradient.
MetricsRecord apply_step(TrainState& state, int step_index, const StepBatch& batch);
MetricsRecord train_step(TrainState& state, int step_index);

// Fraction of prompts whose greedy completion matches ground truth.
double evaluate_greedy(const PolicyParams& params, const PromptBucketer& bucketer,
                       const Vocabulary& vocab, const std::vector<Prompt>& prompts,
                       int max_len);

// Run directory layout: config.json, eval_prompts.jsonl, metrics.jsonl,
// checkpoints/step_NNNNNN.json, summary.json, optional traces/.
// halt_after_step > 0 stops early after that many steps (testing hook).
void run(const RunConfig& cfg, const std::string& run_dir, int halt_after_step = -1);

// Continues a halted run from its latest checkpoint; metrics rows past the
// checkpoint are dropped and regenerated so the log matches an uninterrupted
// run byte for byte.
void resume(const std::string& run_dir, int halt_after_step = -1);

void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path, const RunConfig& cfg);

std::vector<Prompt> make_eval_prompts(const RunConfig& cfg);
Prompt training_prompt(const RunConfig& cfg, int pool_index);

// Rollout seed stream: pure mix of (run seed, step, prompt id, rollout).
std::uint64_t rollout_seed(std::uint64_t run_seed, int step, std::int64_t prompt_id, int g);

}  // namespace deskrl

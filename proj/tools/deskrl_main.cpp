// Operator entry point. Verbs: run, sweep, report, import-traces,
// score-traces, gradcheck, eval. The run-directory root comes from
// DESKRL_RUN_ROOT (default "runs"); everything else lives in config files.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deskrl/config.hpp"
#include "deskrl/errors.hpp"
#include "deskrl/gradcheck.hpp"
#include "deskrl/report.hpp"
#include "deskrl/sweep.hpp"
#include "deskrl/task.hpp"
#include "deskrl/traces.hpp"
#include "deskrl/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::string run_root() {
  const char* env = std::getenv("DESKRL_RUN_ROOT");
  return (env && *env) ? std::string(env) : std::string("runs");
}

// Bare names resolve under the run root; explicit paths pass through.
std::string resolve_dir(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  const fs::path under_root = fs::path(run_root()) / arg;
  if (fs::exists(under_root)) return under_root.string();
  return arg;
}

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(csv.substr(start));
      break;
    }
    out.push_back(csv.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

int dispatch(int argc, char** argv) {
  using deskrl::RunConfig;

  CLI::App app{"tabular RL trainer on a synthetic modular-arithmetic task"};
  app.require_subcommand(1);

  std::string config_path;
  std::string name;
  bool do_resume = false;
  int halt_after = -1;
  auto* run_cmd = app.add_subcommand("run", "train under a config, or resume a halted run");
  run_cmd->add_option("--config", config_path, "config file (ignored on resume)");
  run_cmd->add_option("--name", name, "run directory name under the run root")->required();
  run_cmd->add_flag("--resume", do_resume, "continue from the latest checkpoint");
  run_cmd->add_option("--halt-after", halt_after, "stop after this many steps");

  std::string sweep_axis;
  std::string sweep_values;
  auto* sweep_cmd = app.add_subcommand("sweep", "one run per value of a single config key");
  sweep_cmd->add_option("--config", config_path, "base config file")->required();
  sweep_cmd->add_option("--axis", sweep_axis, "config key to vary")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
  sweep_cmd->add_option("--name", name, "sweep directory name under the run root")->required();

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "emit CSV series from a run or sweep directory");
  report_cmd->add_option("dir", report_dir, "run or sweep directory (or name under the root)")
      ->required();

  std::string trace_file;
  auto* import_cmd = app.add_subcommand("import-traces", "validate a trace file");
  import_cmd->add_option("file", trace_file, "trace file")->required();

  std::string scored_out;
  auto* score_cmd =
      app.add_subcommand("score-traces", "traces -> advantages and gate masks, offline");
  score_cmd->add_option("file", trace_file, "trace file")->required();
  score_cmd->add_option("--config", config_path, "config file")->required();
  score_cmd->add_option("--out", scored_out, "output file")->required();

  std::uint64_t gc_seed = 12345;
  int gc_configs = 20;
  double gc_tol = 1e-4;
  auto* gc_cmd =
      app.add_subcommand("gradcheck", "finite differences against the analytic gradient");
  gc_cmd->add_option("--seed", gc_seed, "rng seed");
  gc_cmd->add_option("--configs", gc_configs, "number of randomized configurations");
  gc_cmd->add_option("--tolerance", gc_tol, "max allowed elementwise relative error");

  std::string checkpoint_path;
  std::string prompts_path;
  auto* eval_cmd = app.add_subcommand("eval", "greedy accuracy of a checkpoint on a prompt file");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--prompts", prompts_path, "prompt set file")->required();
  eval_cmd->add_option("--config", config_path,
                       "config file (default: config.json in the checkpoint's run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help is success, anything else is bad usage
  }

  if (run_cmd->parsed()) {
    const std::string dir = (fs::path(run_root()) / name).string();
    if (do_resume) {
      deskrl::resume(dir, halt_after);
    } else {
      if (config_path.empty())
        throw deskrl::ValidationError("run requires --config unless resuming");
      deskrl::run(deskrl::load_config(config_path), dir, halt_after);
    }
    std::cout << dir << "\n";
    return 0;
  }
  if (sweep_cmd->parsed()) {
    const RunConfig base = deskrl::load_config(config_path);
    const std::string root = (fs::path(run_root()) / name).string();
    const auto dirs = deskrl::run_sweep(base, sweep_axis, split_values(sweep_values), root);
    for (const auto& d : dirs) std::cout << d << "\n";
    return 0;
  }
  if (report_cmd->parsed()) {
    for (const auto& f : deskrl::emit_report(resolve_dir(report_dir))) std::cout << f << "\n";
    return 0;
  }
  if (import_cmd->parsed()) {
    const deskrl::TraceSet set = deskrl::import_traces(trace_file);
    std::cout << "groups=" << set.groups.size()
              << " rollouts_per_prompt=" << set.rollouts_per_prompt
              << " vocab_size=" << set.vocab_size << "\n";
    return 0;
  }
  if (score_cmd->parsed()) {
    const deskrl::TraceSet set = deskrl::import_traces(trace_file);
    const RunConfig cfg = deskrl::load_config(config_path);
    deskrl::write_scored_traces(scored_out, deskrl::score_traces(set, cfg));
    std::cout << scored_out << "\n";
    return 0;
  }
  if (gc_cmd->parsed()) {
    const deskrl::GradCheckResult r = deskrl::run_gradcheck(gc_seed, gc_configs, gc_tol);
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.detail << "\n";
    return r.pass ? 0 : 2;
  }
  if (eval_cmd->parsed()) {
    if (config_path.empty()) {
      config_path =
          (fs::path(checkpoint_path).parent_path().parent_path() / "config.json").string();
    }
    const RunConfig cfg = deskrl::load_config(config_path);
    const deskrl::TrainState state = deskrl::load_checkpoint(checkpoint_path, cfg);
    const auto prompts = deskrl::read_prompt_set(prompts_path);
    const double acc = deskrl::evaluate_greedy(state.params, state.bucketer, state.vocab, prompts,
                                               cfg.max_completion_length);
    std::cout << "accuracy=" << nlohmann::json(acc).dump() << " prompts=" << prompts.size()
              << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const deskrl::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const deskrl::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const deskrl::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

#include "deskrl/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "deskrl/diagnostics.hpp"
#include "deskrl/errors.hpp"
#include "deskrl/metrics.hpp"

namespace deskrl {

namespace fs = std::filesystem;

namespace {

// Shortest round-trip decimal form; keeps re-emission byte-identical.
std::string num(double x) { return nlohmann::json(x).dump(); }

std::string opt_num(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << body;
  if (!f) throw IoError("write failed: " + path);
}

StabilityStats accuracy_stability(const std::vector<MetricsRecord>& recs) {
  std::vector<double> acc;
  std::vector<int> steps;
  for (const auto& r : recs) {
    acc.push_back(r.heldout_accuracy);
    steps.push_back(r.step);
  }
  return stability_stats(acc, steps);
}

std::string stability_csv(const StabilityStats& st) {
  std::string body = "peak,peak_step,collapse_step,end,retention\n";
  body += num(st.peak) + ',' + std::to_string(st.peak_step) + ',';
  if (st.collapse_step) body += std::to_string(*st.collapse_step);
  body += ',' + num(st.end) + ',' + num(st.retention) + '\n';
  return body;
}

// Emits series.csv + stability.csv for one run directory; returns the
// parsed records for sweep-level aggregation.
std::vector<MetricsRecord> report_run(const std::string& dir,
                                      std::vector<std::string>* written) {
  std::vector<int> bad;
  const auto recs = read_metrics(dir + "/metrics.jsonl", &bad);
  for (int line : bad)
    std::cerr << dir << "/metrics.jsonl: skipped corrupt row at line " << line << "\n";
  if (recs.empty()) throw ValidationError("metrics log holds no readable rows: " + dir);

  std::string body =
      "step,heldout_accuracy,mean_token_entropy,mean_completion_length,"
      "loss_total,loss_policy,loss_klcov_penalty,loss_ref_kl,"
      "reward_mean_cf,reward_mean_cert,reward_mean_gt,gate_size,"
      "probe_norm_cf,probe_norm_cert,probe_residual,learning_rate\n";
  for (const auto& r : recs) {
    body += std::to_string(r.step) + ',' + num(r.heldout_accuracy) + ',' +
            num(r.mean_token_entropy) + ',' + num(r.mean_completion_length) + ',' +
            num(r.loss_total) + ',' + num(r.loss_policy) + ',' +
            num(r.loss_klcov_penalty) + ',' + num(r.loss_ref_kl) + ',' +
            num(r.reward_mean_cf) + ',' + num(r.reward_mean_cert) + ',' +
            num(r.reward_mean_gt) + ',' + std::to_string(r.gate_size) + ',' +
            opt_num(r.probe_norm_cf) + ',' + opt_num(r.probe_norm_cert) + ',' +
            opt_num(r.probe_residual) + ',' + num(r.learning_rate) + '\n';
  }
  write_file(dir + "/series.csv", body);
  written->push_back(dir + "/series.csv");

  write_file(dir + "/stability.csv", stability_csv(accuracy_stability(recs)));
  written->push_back(dir + "/stability.csv");
  return recs;
}

}  // namespace

std::vector<std::string> emit_report(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> written;

  if (fs::exists(dir + "/metrics.jsonl")) {
    report_run(dir, &written);
    return written;
  }

  // Sweep layout: subdirectories each holding a metrics log.
  std::vector<std::string> runs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "metrics.jsonl"))
      runs.push_back(entry.path().filename().string());
  }
  if (runs.empty())
    throw ValidationError("no metrics logs under " + dir +
                          " (expected metrics.jsonl or run subdirectories)");
  std::sort(runs.begin(), runs.end());

  std::string comparison =
      "run,peak,peak_step,collapse_step,end,retention,"
      "final_heldout_accuracy,final_mean_token_entropy\n";
  for (const auto& name : runs) {
    const auto recs = report_run(dir + "/" + name, &written);
    const StabilityStats st = accuracy_stability(recs);
    comparison += name + ',' + num(st.peak) + ',' + std::to_string(st.peak_step) + ',';
    if (st.collapse_step) comparison += std::to_string(*st.collapse_step);
    comparison += ',' + num(st.end) + ',' + num(st.retention) + ',' +
                  num(recs.back().heldout_accuracy) + ',' +
                  num(recs.back().mean_token_entropy) + '\n';
  }
  write_file(dir + "/comparison.csv", comparison);
  written.push_back(dir + "/comparison.csv");
  return written;
}

}  // namespace deskrl

#pragma once

#include <optional>
#include <string>
#include <vector>

namespace deskrl {

// One line-delimited record per optimization step. Probe fields are absent
// (null) in ground_truth mode where channel attribution is undefined.
struct MetricsRecord {
  int step = 0;
  double loss_total = 0.0;
  double loss_policy = 0.0;
  double loss_klcov_penalty = 0.0;
  double loss_ref_kl = 0.0;
  double mean_completion_length = 0.0;
  double mean_token_entropy = 0.0;
  double reward_mean_cf = 0.0;
  double reward_mean_cert = 0.0;
  double reward_mean_gt = 0.0;
  int gate_size = 0;
  std::optional<double> probe_norm_cf;
  std::optional<double> probe_norm_cert;
  std::optional<double> probe_residual;
  double heldout_accuracy = 0.0;
  double learning_rate = 0.0;
};

std::string metrics_to_line(const MetricsRecord& r);  // no trailing newline
MetricsRecord metrics_from_line(const std::string& line);

// Appends one record per call; flushes so a halted run leaves a usable log.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path, bool truncate = true);
  void append(const MetricsRecord& r);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Skips corrupt rows, reporting their 1-based line numbers into bad_lines.
std::vector<MetricsRecord> read_metrics(const std::string& path,
                                        std::vector<int>* bad_lines = nullptr);

}  // namespace deskrl

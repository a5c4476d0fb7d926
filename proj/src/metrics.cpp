#include "deskrl/metrics.hpp"

#include <fstream>

#include <json.hpp>

#include "deskrl/errors.hpp"

namespace deskrl {

using ordered_json = nlohmann::ordered_json;

std::string metrics_to_line(const MetricsRecord& r) {
  ordered_json j;
  j["step"] = r.step;
  j["loss_total"] = r.loss_total;
  j["loss_policy"] = r.loss_policy;
  j["loss_klcov_penalty"] = r.loss_klcov_penalty;
  j["loss_ref_kl"] = r.loss_ref_kl;
  j["mean_completion_length"] = r.mean_completion_length;
  j["mean_token_entropy"] = r.mean_token_entropy;
  j["reward_mean_cf"] = r.reward_mean_cf;
  j["reward_mean_cert"] = r.reward_mean_cert;
  j["reward_mean_gt"] = r.reward_mean_gt;
  j["gate_size"] = r.gate_size;
  if (r.probe_norm_cf)
    j["probe_norm_cf"] = *r.probe_norm_cf;
  else
    j["probe_norm_cf"] = nullptr;
  if (r.probe_norm_cert)
    j["probe_norm_cert"] = *r.probe_norm_cert;
  else
    j["probe_norm_cert"] = nullptr;
  if (r.probe_residual)
    j["probe_residual"] = *r.probe_residual;
  else
    j["probe_residual"] = nullptr;
  j["heldout_accuracy"] = r.heldout_accuracy;
  j["learning_rate"] = r.learning_rate;
  return j.dump();
}

MetricsRecord metrics_from_line(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("bad metrics line: ") + e.what());
  }
  MetricsRecord r;
  try {
    r.step = j.at("step").get<int>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_policy = j.at("loss_policy").get<double>();
    r.loss_klcov_penalty = j.at("loss_klcov_penalty").get<double>();
    r.loss_ref_kl = j.at("loss_ref_kl").get<double>();
    r.mean_completion_length = j.at("mean_completion_length").get<double>();
    r.mean_token_entropy = j.at("mean_token_entropy").get<double>();
    r.reward_mean_cf = j.at("reward_mean_cf").get<double>();
    r.reward_mean_cert = j.at("reward_mean_cert").get<double>();
    r.reward_mean_gt = j.at("reward_mean_gt").get<double>();
    r.gate_size = j.at("gate_size").get<int>();
    if (!j.at("probe_norm_cf").is_null()) r.probe_norm_cf = j.at("probe_norm_cf").get<double>();
    if (!j.at("probe_norm_cert").is_null())
      r.probe_norm_cert = j.at("probe_norm_cert").get<double>();
    if (!j.at("probe_residual").is_null()) r.probe_residual = j.at("probe_residual").get<double>();
    r.heldout_accuracy = j.at("heldout_accuracy").get<double>();
    r.learning_rate = j.at("learning_rate").get<double>();
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("bad metrics line: ") + e.what());
  }
  return r;
}

MetricsWriter::MetricsWriter(const std::string& path, bool truncate) : path_(path) {
  std::ofstream f(path_, truncate ? std::ios::trunc : std::ios::app);
  if (!f) throw IoError("cannot open metrics log: " + path_);
}

void MetricsWriter::append(const MetricsRecord& r) {
  std::ofstream f(path_, std::ios::app);
  if (!f) throw IoError("cannot open metrics log: " + path_);
  f << metrics_to_line(r) << '\n';
  f.flush();
  if (!f) throw IoError("metrics write failed: " + path_);
}

std::vector<MetricsRecord> read_metrics(const std::string& path, std::vector<int>* bad_lines) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open metrics log: " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_line(line));
    } catch (const IoError&) {
      if (bad_lines) bad_lines->push_back(lineno);
    }
  }
  return out;
}

}  // namespace deskrl

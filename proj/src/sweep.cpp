#include "deskrl/sweep.hpp"

#include <json.hpp>

#include "deskrl/errors.hpp"
#include "deskrl/trainer.hpp"

namespace deskrl {

using nlohmann::json;

std::vector<std::string> run_sweep(const RunConfig& base, const std::string& axis,
                                   const std::vector<std::string>& values,
                                   const std::string& root) {
  if (values.empty()) throw ValidationError("sweep needs at least one value");

  json base_json = json::parse(serialize_config(base));
  if (!base_json.contains(axis)) throw ValidationError("unknown sweep axis: " + axis);

  std::vector<std::string> dirs;
  for (const auto& value : values) {
    json j = base_json;
    try {
      j[axis] = json::parse(value);
    } catch (const json::exception&) {
      // bare strings are a convenience: reward_mode=multi instead of "multi"
      j[axis] = value;
    }
    const RunConfig cfg = parse_config_text(j.dump());
    const std::string dir = root + "/" + axis + "=" + value;
    run(cfg, dir);
    dirs.push_back(dir);
  }
  return dirs;
}

}  // namespace deskrl

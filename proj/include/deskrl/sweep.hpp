#pragma once

#include <string>
#include <vector>

#include "deskrl/config.hpp"

namespace deskrl {

// One run per value, written under root/<axis>=<value>/. axis must name a
// config key; values are JSON literals. Seeds come from the base config, so
// runs differ only in the swept parameter.
std::vector<std::string> run_sweep(const RunConfig& base, const std::string& axis,
                                   const std::vector<std::string>& values,
                                   const std::string& root);

}  // namespace deskrl

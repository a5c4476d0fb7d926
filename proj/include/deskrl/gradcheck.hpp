#pragma once

#include <cstdint>
#include <string>

namespace deskrl {

// Central finite differences (step 1e-5) against the analytic gradient of the
// full training loss on randomized small configurations. Each configuration
// is forced to contain gated tokens and both clip regions. Differencing is
// restricted to parameter rows the batch actually touches, plus spot checks
// that untouched rows have exactly zero gradient.
struct GradCheckResult {
  int configs = 0;
  double max_rel_err = 0.0;
  bool pass = false;
  std::string detail;
};

GradCheckResult run_gradcheck(std::uint64_t seed, int n_configs, double tolerance);

}  // namespace deskrl

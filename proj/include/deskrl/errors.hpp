#pragma once

#include <stdexcept>

namespace deskrl {

// Error taxonomy mirrors the CLI exit codes: validation 1, numerical 2, io 3.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace deskrl

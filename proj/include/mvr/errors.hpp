#pragma once

#include <stdexcept>
#include <string>

namespace mvr {

// Validation failures: bad config values, shape mismatches, out-of-range
// arguments. CLI exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric failures at runtime: non-finite values, degenerate intervals,
// out-of-bounds samples. CLI exit code 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem and format problems. CLI exit code 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mvr

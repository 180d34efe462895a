#pragma once

#include <stdexcept>
#include <string>

namespace retinest {

/// Input that violates a documented precondition (bad config, malformed CSV,
/// out-of-range parameter). Maps to exit code 2 at the CLI.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed to produce a usable result (singular shifted
/// solve, non-finite propagation, unstable reduced model, ...). Maps to exit
/// code 3 at the CLI.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace retinest

#pragma once

#include <stdexcept>
#include <string>

namespace cslb {

// Error taxonomy. The CLI maps these to exit codes: ConfigError -> 2,
// IoError -> 3, NumericError and everything else -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches between tensors.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse: calling backward twice, losses detached from the tape, etc.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace cslb

#pragma once

#include <stdexcept>
#include <string>

namespace comet {

/// Incompatible tensor or array shapes.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Class index or similar outside its valid range.
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Invalid experiment or training configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A loss or activation became NaN/Inf.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace comet

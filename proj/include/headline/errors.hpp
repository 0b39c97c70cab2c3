#pragma once

#include <stdexcept>
#include <string>

namespace headline {

/// Violated precondition: bad index, mismatched dimensions, invalid config.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A value left the finite reals (NaN or Inf).
struct NumericError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A verification oracle could not be applied, e.g. a loss that is not
/// deterministic under finite differences.
struct OracleViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Unreadable or malformed input data (files, corpora, checkpoints).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operation requested on a model whose attention mode cannot support it.
struct UnsupportedModeError : ContractError {
  using ContractError::ContractError;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace headline

#pragma once

#include <stdexcept>
#include <string>

namespace libra {

// Bad shapes, out-of-range indices, non-simplex marginals, bad configs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced mid-computation. The message names where it happened.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary container or checkpoint (bad magic, version, truncation).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Manifest and container disagree (missing entry, width mismatch, ...).
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation called in the wrong order (e.g. attribution before backward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace libra

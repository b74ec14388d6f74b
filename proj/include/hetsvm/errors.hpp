#pragma once

#include <stdexcept>
#include <string>

namespace hetsvm {

// Bad column-role declarations, unknown baseline levels, unsupported design
// requests. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-domain input values (non-binary outcome, NaN, negative
// weights, dimension mismatches). Maps to CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every evaluated tuning point was degenerate. Maps to CLI exit code 4.
class TuningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The active set of an SVM iteration became empty.
class DegenerateFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requested treatment has no column in the fitted design.
class NotEstimableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Affine calibration of a simulation scenario did not reach its target.
class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hetsvm

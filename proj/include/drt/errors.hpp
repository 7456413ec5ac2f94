#pragma once

#include <stdexcept>
#include <string>

namespace drt {

/// Operand extents are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced or received a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The API was called in a state it does not support (e.g. backward on a leaf).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A file did not match the expected on-disk format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace drt

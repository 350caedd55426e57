#pragma once

#include <stdexcept>
#include <string>

namespace modbal {

/// Thrown when tensor shapes or channel counts do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces (or is fed) a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when an object is used in a state that no longer matches its origin,
/// e.g. a forward cache replayed against an updated model.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace modbal

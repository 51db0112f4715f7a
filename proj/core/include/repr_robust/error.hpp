#pragma once

#include <stdexcept>
#include <string>

namespace repr_robust {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition on argument values was violated.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Misuse of a differentiation graph (foreign variable, non-scalar root, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Binary container (checkpoint or dataset file) could not be read or written.
class FormatError : public Error {
 public:
  enum class Kind { Io, BadMagic, BadVersion, Truncated, CountMismatch, BadHeader };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace repr_robust

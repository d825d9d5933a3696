#pragma once

#include <stdexcept>
#include <string>

namespace istt {

// Error hierarchy used across the library. Everything derives from Error so
// callers (CLI, bindings) can catch one type and report the message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid argument values (empty sequences, out-of-range settings).
class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error(msg) {}
};

// API contract violations (non-scalar loss, all-masked batch).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf detected in a computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// File format / serialization problems. Messages name the offending file.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace istt

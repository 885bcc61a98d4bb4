#pragma once

#include <stdexcept>
#include <string>

namespace crclip {

// Tensor dimension / shape mismatches. Messages report both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Violated call contracts (non-scalar loss, dropout rate out of range, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid module configuration (head divisibility, patch geometry, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid runtime input (out-of-vocabulary token, index out of range, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite value encountered where finiteness is required (training loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IoErrorKind {
  FileAccess,
  BadMagic,
  BadVersion,
  BadDtype,
  Truncated,
  ChecksumMismatch,
  KeyMismatch,
};

const char* to_string(IoErrorKind kind);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

}  // namespace crclip

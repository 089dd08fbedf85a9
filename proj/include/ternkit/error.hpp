#pragma once

#include <stdexcept>
#include <string>

namespace ternkit {

// Precondition violated by caller-supplied values (bad code, bad shape, beta <= 0, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A packed tensor whose bit planes break the canonical encoding.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LoadErrorKind { Io, BadMagic, Truncated, ChecksumMismatch, Malformed };

class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  LoadErrorKind kind() const noexcept { return kind_; }

 private:
  LoadErrorKind kind_;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ternkit

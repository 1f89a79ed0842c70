#pragma once

#include <stdexcept>
#include <string>

namespace acl {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (shape mismatch, label outside
// the mask, empty input where data is required, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment or stream configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(what), key_(std::move(key)) {}

  // Offending configuration key, empty when not tied to a single key.
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Annotation requests that would break the budget ledger or pool bookkeeping.
class BudgetError : public Error {
 public:
  using Error::Error;
};

class IdxError : public Error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, bad_shape };

  IdxError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace acl

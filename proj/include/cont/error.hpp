#pragma once

#include <stdexcept>
#include <string>

namespace cont {

// Violated precondition of an operation (shape mismatch, empty set, degenerate vector).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed user-supplied data, e.g. token ids outside the vocabulary.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: unknown key, bad value, failed cross-field check.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg, std::string key = {})
      : std::runtime_error(msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CONT_EXPECT(cond, msg)                                    \
  do {                                                            \
    if (!(cond)) throw ::cont::ContractError(std::string(msg));   \
  } while (0)

}  // namespace cont

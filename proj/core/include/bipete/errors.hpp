// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bipete {

// Every error carries a category so the CLI can map it to an exit code
// (input/config -> 2, numeric -> 3, degenerate statistics -> 4).
enum class ErrorKind { shape, domain, config, range, numeric, input, degenerate, contract };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::shape, "shape error: " + w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorKind::domain, "domain error: " + w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, "config error: " + w) {}
};
struct RangeError : Error {
  explicit RangeError(const std::string& w) : Error(ErrorKind::range, "range error: " + w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, "numeric error: " + w) {}
};
struct InputError : Error {
  explicit InputError(const std::string& w) : Error(ErrorKind::input, "input error: " + w) {}
};
/// Undefined metric, empty TP/TN group, single-class fold.
struct DegenerateError : Error {
  explicit DegenerateError(const std::string& w)
      : Error(ErrorKind::degenerate, "degenerate statistics: " + w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::contract, "contract error: " + w) {}
};

}  // namespace bipete

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedrecon {

// Operand shapes disagree (image vs mask, parameter vector vs config, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or infeasible user-facing configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numeric argument outside its mathematical domain (e.g. lambda <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Federation message/aggregation contract violated.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Zero round-1 discrepancy: sigma_k = beta / 0 is undefined.
class DegenerateCalibration : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A training step produced NaN/Inf. Never clamped.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary file. `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace fedrecon

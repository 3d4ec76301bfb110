#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace atgn {

// Base of every error the library throws. `exit_code()` follows the CLI
// convention: 1 for validation/config problems, 2 for runtime/numeric ones.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class PathError : public Error {
 public:
  using Error::Error;
};

// Violation of a caller contract (e.g. a gradient supplied for a frozen
// parameter).
class ContractError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace atgn

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cloudmask {

// Caller broke an operation's precondition (shape mismatch, stale cache, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid user-facing configuration (depth, threshold, band lists, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that is well-formed but unusable (unknown class codes, no valid
// pixels, non-finite values).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Base class for container decoding failures. `offset` is the byte position
// at which decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  TruncatedError(std::uint64_t expected, std::uint64_t actual)
      : FormatError("truncated payload: expected at least " +
                        std::to_string(expected) + " bytes, found " +
                        std::to_string(actual),
                    actual),
        expected_(expected),
        actual_(actual) {}
  std::uint64_t expected() const { return expected_; }
  std::uint64_t actual() const { return actual_; }

 private:
  std::uint64_t expected_;
  std::uint64_t actual_;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace cloudmask

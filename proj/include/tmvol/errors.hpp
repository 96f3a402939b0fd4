#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tmvol {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A record parsed but violates a domain invariant (e.g. crossed book).
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::int64_t timestamp)
      : Error(what + " (ts=" + std::to_string(timestamp) + ")"), timestamp_(timestamp) {}
  std::int64_t timestamp() const noexcept { return timestamp_; }

 private:
  std::int64_t timestamp_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class InitializationError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace tmvol

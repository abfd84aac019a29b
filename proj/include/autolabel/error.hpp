#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace autolabel {

/// Base of every error the engine raises. `kind()` is a short stable token
/// used by the CLI's machine-parsable error line and the HTTP layer.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Input violates a domain invariant (bad box, bad threshold, ...).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message)
      : Error("validation", message) {}
};

/// Malformed text input. Line numbers are 1-based; 0 means "whole document".
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("parse", line == 0 ? message
                                 : "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// State-machine conflict (claiming a claimed task, starting a running loop).
class ConflictError : public Error {
 public:
  explicit ConflictError(const std::string& message)
      : Error("conflict", message) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& message)
      : Error("not_found", message) {}
};

/// An external process (detector wrapper, retrain hook, embedding provider)
/// failed or produced unusable output.
class ExternalError : public Error {
 public:
  explicit ExternalError(const std::string& message)
      : Error("external", message) {}
};

}  // namespace autolabel

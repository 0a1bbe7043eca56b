#pragma once

#include <stdexcept>
#include <string>

namespace adapt {

// Base of every error thrown by the library. `what()` is human-readable;
// subclasses carry the structured fields callers branch on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or unreadable input file (CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A line in a JSONL/JSON input that fails schema validation.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& msg)
      : Error(source + ":" + std::to_string(line) + ": " + msg),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

// A gold charge or article that is not a member of the label pool.
class UnknownLabelError : public Error {
 public:
  explicit UnknownLabelError(std::string label, const std::string& where = {})
      : Error("unknown label '" + label + "'" + (where.empty() ? "" : " in " + where)),
        label_(std::move(label)) {}

  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace adapt

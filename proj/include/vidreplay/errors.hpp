#pragma once

#include <stdexcept>
#include <string>

namespace vidreplay {

// Incompatible extents handed to a primitive or layer.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf produced by a primitive.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operation called in the wrong lifecycle state (e.g. backward on a released graph).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, const std::string& source = "")
      : std::runtime_error((source.empty() ? "line " : source + ":") + std::to_string(line) + ": " + what),
        message_(what),
        line_(line) {}

  std::size_t line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  std::size_t line_;
};

// Configuration problem; path() names the offending key, e.g. "method.q".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path), message_(what) {}

  const std::string& path() const { return path_; }
  const std::string& message() const { return message_; }

 private:
  std::string path_;
  std::string message_;
};

}  // namespace vidreplay

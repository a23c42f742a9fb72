#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace otj {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  /// 1-based line number, 0 when the error is not tied to a line.
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class PoolExhausted : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class PoolMismatch : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class IllegalAction : public std::logic_error {
  using std::logic_error::logic_error;
};

class StaleAnswer : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class BindError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class StreamStopped : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace otj

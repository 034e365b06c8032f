#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rmf {

/// Failure classes surfaced by the command-line tool as distinct exit codes.
enum class ErrorKind { config, data, divergence, report_write };

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Raised when training produces a non-finite loss.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::divergence, what) {}
};

class ReportWriteError : public Error {
 public:
  explicit ReportWriteError(const std::string& what) : Error(ErrorKind::report_write, what) {}
};

}  // namespace rmf

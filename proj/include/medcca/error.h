#pragma once

#include <stdexcept>
#include <string>

namespace medcca {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind { kUsage = 1, kData = 2, kNumerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Bad configuration or arguments.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

// Malformed or unusable input data.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Parse or format problem tied to a specific line of an input file.
class FormatError : public DataError {
 public:
  FormatError(const std::string& source, size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  size_t line() const { return line_; }

 private:
  size_t line_;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

// Iterative solver gave up; carries the residual it reached.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, double residual)
      : NumericalError(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

inline int ExitCodeFor(ErrorKind kind) { return static_cast<int>(kind); }

}  // namespace medcca

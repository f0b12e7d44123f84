#pragma once

#include <stdexcept>
#include <string>

namespace radood {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind { config, numeric, io };

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

/// Invalid parameters or a precondition violated by user-supplied input.
class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Non-finite values, divergence, loss of positive definiteness.
class NumericError : public Error {
  public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class NotPositiveDefinite : public NumericError {
  public:
    using NumericError::NumericError;
};

class IoError : public Error {
  public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace radood

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lfm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition or domain invariant was violated by the caller.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration could not be parsed or resolved.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or written, or its contents are malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared during integration or training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace lfm

#pragma once

#include <stdexcept>
#include <string>

namespace lmm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Vector or matrix dimensions disagree with the object they are used with.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// A scalar parameter is outside its admissible range.
class ParameterError : public Error {
public:
  using Error::Error;
};

/// A dense materialization would exceed the configured entry cap.
class SizeGuardError : public Error {
public:
  using Error::Error;
};

/// Problem generation could not satisfy its contract.
class GenerationError : public Error {
public:
  using Error::Error;
};

/// A probe was asked to analyse an input on which it is undefined.
class DegenerateInputError : public Error {
public:
  using Error::Error;
};

/// Experiment configuration failed validation; `path` names the field.
class ConfigError : public Error {
public:
  ConfigError(std::string path, const std::string &what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string &path() const noexcept { return path_; }

private:
  std::string path_;
};

/// A non-finite value appeared inside an iterative linear solve.
class NumericalBreakdown : public Error {
public:
  NumericalBreakdown(int iteration, const std::string &what)
      : Error("numerical breakdown at iteration " + std::to_string(iteration) +
              ": " + what),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

private:
  int iteration_;
};

namespace detail {

inline void require_dim(bool ok, const std::string &what) {
  if (!ok)
    throw DimensionError(what);
}

inline void require_param(bool ok, const std::string &what) {
  if (!ok)
    throw ParameterError(what);
}

} // namespace detail
} // namespace lmm

#pragma once

#include <stdexcept>
#include <string>

namespace llmscale {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input document (scale spec, corpus, config, criteria) is malformed or
/// violates an invariant. The CLI maps this to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Data is present but unusable for the requested computation
/// (too few rows, zero total variance, singular covariance, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A persisted artifact an analysis stage depends on is missing or unreadable.
class ArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace llmscale

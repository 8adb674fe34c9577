#pragma once

#include <stdexcept>
#include <string>

namespace mbvi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument values: negative states, out-of-range indices, bad models.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SimulationAborted : public Error {
 public:
  using Error::Error;
};

class TooLargeError : public Error {
 public:
  using Error::Error;
};

/// Observations that have zero likelihood under every retained state.
class DegenerateEvidence : public Error {
 public:
  using Error::Error;
};

class IntegrationFailure : public Error {
 public:
  using Error::Error;
};

/// Moment equations that need a closure but were requested without one.
class NotClosedError : public Error {
 public:
  using Error::Error;
};

class UndefinedParameter : public Error {
 public:
  using Error::Error;
};

}  // namespace mbvi

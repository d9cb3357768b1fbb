#pragma once

#include <stdexcept>
#include <string>

namespace davlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or shape for a numeric routine.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, detected before any compute starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Exact oracle requested on an instance too large to enumerate.
class OracleUnavailable : public Error {
 public:
  using Error::Error;
};

// Discrete transition with zero probability under the SUBS kernel.
class UnreachableTransition : public Error {
 public:
  using Error::Error;
};

// Malformed training data (e.g. a batch containing unreachable steps).
class DataError : public Error {
 public:
  using Error::Error;
};

// Operation not supported by this object (gradient of a black-box reward).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// All importance weights underflowed.
class DegenerateWeights : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace davlab

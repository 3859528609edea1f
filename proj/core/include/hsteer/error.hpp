#pragma once

#include <stdexcept>
#include <string>

namespace hsteer {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree (vector dims, probe input width, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value does not hold.
class ValueError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a public boundary, or an iteration diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hsteer

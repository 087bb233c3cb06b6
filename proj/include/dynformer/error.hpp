#pragma once

#include <stdexcept>
#include <string>

namespace dynformer {

// Base of every error raised by the library. The CLI maps the subclasses
// onto exit codes (validation 1, numerical 2, I/O 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents, ranks or channel counts.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Bad configuration or out-of-domain argument.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite state, solver divergence, non-convergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Unreadable, unwritable or corrupt files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynformer

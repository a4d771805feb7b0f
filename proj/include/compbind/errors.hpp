#pragma once

#include <stdexcept>
#include <string>

namespace compbind {

// Caller supplied something malformed: bad shapes, out-of-range values,
// missing inputs. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Something went wrong while doing valid work (I/O, divergence). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace compbind

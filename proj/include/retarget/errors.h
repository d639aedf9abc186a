#pragma once

#include <stdexcept>
#include <string>

namespace retarget {

// Bad user input: malformed files, inconsistent configuration, violated
// preconditions that the caller can fix. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during compute (divergence, non-finite losses).
class RuntimeFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace retarget

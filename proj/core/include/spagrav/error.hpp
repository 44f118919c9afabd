#pragma once

#include <stdexcept>
#include <string>

namespace spagrav {

// Bad user input: malformed files, violated preconditions, inconsistent
// configuration. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical step failed (non-SPD precision, non-finite predictor).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spagrav

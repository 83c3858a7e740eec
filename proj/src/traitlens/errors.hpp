#pragma once

#include <stdexcept>

namespace traitlens {

// A computation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace traitlens

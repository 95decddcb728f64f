#pragma once

#include <stdexcept>
#include <string>

namespace relprobe {

// Raised for malformed input, violated invariants and unusable configuration.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relprobe

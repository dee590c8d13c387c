#pragma once

#include <stdexcept>
#include <string>

namespace tps {

/// Raised when an input violates a documented contract (shapes, ranges,
/// schema). The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tps

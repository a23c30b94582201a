#pragma once

#include <stdexcept>
#include <string>

namespace rspnet {

// Bad input: shapes, configs, files. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure during a run (divergence, I/O). The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rspnet

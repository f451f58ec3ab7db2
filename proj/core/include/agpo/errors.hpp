#pragma once

#include <stdexcept>

namespace agpo {

// Malformed configuration or CLI input. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A trace failed bit-exact replay. The CLI maps this to exit code 4.
struct VerifyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace agpo

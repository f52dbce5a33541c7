#pragma once

#include <stdexcept>
#include <string>

namespace famarl {

/// Invalid network or run configuration (shape mismatch, unknown block, bad key).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated an operation precondition (stepping a finished episode,
/// unknown script name, out-of-range latent index, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value during training or differentiation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace famarl

#pragma once

#include <stdexcept>
#include <string>

namespace planartrap {

/// Invalid input: malformed configuration, unknown channel, bad geometry.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed to reach its postcondition.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace planartrap

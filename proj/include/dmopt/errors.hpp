#pragma once

#include <stdexcept>
#include <string>

namespace dmopt {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numerical 4.
// Messages start with a stable lowercase tag ("singular-input: ...") so
// callers and tests can dispatch on the failure kind without parsing prose.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dmopt

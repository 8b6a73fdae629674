#pragma once

#include <stdexcept>
#include <string>

namespace qclt {

// Exit-code contract used by the CLI: 0 pass, 1 internal error,
// 2 assumption violation, 3 config/fixture error.

// Malformed fixture or config input (exit code 3).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// The joint chain fails irreducibility/aperiodicity (exit code 2).
struct AssumptionError : std::runtime_error {
  explicit AssumptionError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numerical self-check failed; indicates an implementation bug (exit code 1).
struct InternalError : std::runtime_error {
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qclt

#pragma once

#include <stdexcept>
#include <string>

namespace msp {

// Error taxonomy mirrored by the CLI exit codes: config 2, I/O 3,
// divergence 4, shape 5.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct divergence_error : std::runtime_error {
  explicit divergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values that are not shape problems (ranges, degenerate data).
struct value_error : std::runtime_error {
  explicit value_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace msp

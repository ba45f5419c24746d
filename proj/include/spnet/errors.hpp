#pragma once

#include <stdexcept>
#include <string>

namespace spnet {

/// Malformed or inconsistent input data (files, shapes, masks).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values or a failed numerical verification.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spnet

#pragma once

#include <stdexcept>
#include <string>

namespace c2fpose {

struct InvalidQuaternionError : std::runtime_error {
  explicit InvalidQuaternionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyInputError : std::runtime_error {
  explicit EmptyInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InsufficientPointsError : std::runtime_error {
  explicit InsufficientPointsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingCentroidsError : std::runtime_error {
  explicit MissingCentroidsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace c2fpose

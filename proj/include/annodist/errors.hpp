#pragma once

#include <stdexcept>
#include <string>

namespace annodist {

// Malformed or contract-violating input data. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numerical procedure cannot proceed on otherwise valid input. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace annodist

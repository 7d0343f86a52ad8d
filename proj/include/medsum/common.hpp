#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace medsum {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// IO / format problems (bad file, bad record, bad encoding).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Contract violations (bad arguments, shape mismatches, undefined ratios).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace medsum

#pragma once

#include <stdexcept>
#include <string>

namespace dfrec {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: IoError -> 1, InputError/ConfigError -> 2, StateError -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed runtime inputs (shape mismatches, bad argument values).
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid static configuration (sizes incompatible with the architecture).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem and codec failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite numbers are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Persistent-state mismatches (checkpoint vs corpus/provider hashes).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfrec

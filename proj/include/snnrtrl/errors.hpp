#pragma once

#include <stdexcept>
#include <string>

namespace snnrtrl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar argument is outside its admissible domain (tau <= 0, h <= 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Structurally invalid model description (bad selector, unstable coupling).
class SpecError : public Error {
 public:
  using Error::Error;
};

// API called in a state or combination it does not support.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A loss that needs the whole trial was used where per-step evaluation is required.
class LockingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace snnrtrl

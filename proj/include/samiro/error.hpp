#pragma once

#include <stdexcept>
#include <string>

namespace samiro {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch; the message names the offending axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class DivideByZeroError : public Error {
 public:
  using Error::Error;
};

// Malformed input text or files. Messages carry "file:line" context when known.
class ParseError : public Error {
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

}  // namespace samiro

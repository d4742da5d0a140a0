#pragma once

#include <stdexcept>
#include <string>

namespace spdnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition (shape, symmetry, range).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatchError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class NotPositiveDefiniteError : public Error {
 public:
  using Error::Error;
};

class DegenerateSpectrumError : public Error {
 public:
  using Error::Error;
};

class TapeReuseError : public Error {
 public:
  using Error::Error;
};

// Q/K/V selection cannot be built for the requested SMAE depth.
class UnsupportedDepthError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf reached a module boundary.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class RetractionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Malformed dataset / model file. `offset` is the byte position of the fault.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace spdnet

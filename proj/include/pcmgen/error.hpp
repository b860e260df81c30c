#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcmgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: missing files, malformed lines, unknown attributes.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class ValidationError : public DataError {
 public:
  ValidationError(const std::string& what, std::string field)
      : DataError(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf escaped an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training loss went non-finite; the last good checkpoint is kept on disk.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcmgen

#pragma once

#include <stdexcept>
#include <string>

namespace mfq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is not on the grid of a minifloat format.
class NotRepresentable : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered; carries the flat element index when known.
class NonFinite : public Error {
 public:
  NonFinite(const std::string& what, long index = -1) : Error(what), index_(index) {}
  long index() const noexcept { return index_; }

 private:
  long index_;
};

class OverflowError : public Error {
 public:
  OverflowError(const std::string& what, long index) : Error(what), index_(index) {}
  long index() const noexcept { return index_; }

 private:
  long index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfq

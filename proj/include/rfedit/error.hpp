#pragma once

#include <stdexcept>
#include <string>

namespace rfedit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A solver or model produced NaN/Inf. `step()` is the offending step index
/// (or -1 when raised outside a stepped loop).
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, int step) : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

class MissingCacheEntry : public Error {
 public:
  using Error::Error;
};

class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

class NoEditTokens : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfedit

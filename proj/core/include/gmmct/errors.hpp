#pragma once

#include <stdexcept>
#include <string>

namespace gmmct {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Mismatched vector/matrix dimensions or invalid sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Geometric degeneracy: coincident source/detector, a ray parallel to the
/// detector plane, a particle level with the source in the pinned coordinate.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Singular matrices, non-finite objective values, exhausted rejection budgets.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration (schema violations, inconsistent fields).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File read/write failures and malformed on-disk artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gmmct

#pragma once

#include <stdexcept>
#include <string>

namespace mutflow {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Operand shapes are incompatible at graph construction time.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf or hit a numerically undefined point.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Collinear or coincident atoms where a frame or dihedral is required.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, tables, mutation sites).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mutflow

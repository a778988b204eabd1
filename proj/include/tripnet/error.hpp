// Copyright 2026 The tripnet Authors. Apache 2.0 License.
//
// Exception hierarchy shared by every tripnet module.

#pragma once

#include <stdexcept>
#include <string>

namespace tripnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// NaN/inf where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

// Caller violated a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// API used in the wrong mode, e.g. backward on an inference-mode state.
struct UsageError : Error {
  using Error::Error;
};

struct CategoricalDomainError : Error {
  CategoricalDomainError(const std::string& attribute, std::size_t code,
                         std::size_t cardinality)
      : Error("category code " + std::to_string(code) + " out of range for attribute '" +
              attribute + "' (cardinality " + std::to_string(cardinality) + ")"),
        attribute(attribute) {}
  std::string attribute;
};

struct IngestionError : Error {
  using Error::Error;
};

// Malformed input text. Carries the location for diagnostics.
struct ParseError : Error {
  ParseError(const std::string& file, std::size_t line, std::size_t column,
             const std::string& what)
      : Error(file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        file(file),
        line(line),
        column(column) {}
  std::string file;
  std::size_t line;
  std::size_t column;
};

}  // namespace tripnet

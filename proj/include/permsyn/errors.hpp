#pragma once

#include <stdexcept>
#include <string>

namespace permsyn {

// Error classes map onto the CLI exit codes: configuration problems exit 2,
// data problems exit 3, budget exhaustion exits 4.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
  using Error::Error;
};
struct SchemaError : ConfigError {
  using ConfigError::ConfigError;
};

struct DataError : Error {
  using Error::Error;
};
struct IntegrityError : DataError {
  using DataError::DataError;
};
struct CapExceeded : DataError {
  using DataError::DataError;
};
struct DataTypeError : DataError {
  using DataError::DataError;
};
struct IncompleteRow : DataError {
  using DataError::DataError;
};

struct DomainError : Error {
  using Error::Error;
};
struct SubsetError : Error {
  using Error::Error;
};
struct MissingNPM : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct WidthExceeded : Error {
  using Error::Error;
};

struct BudgetOverdraw : Error {
  using Error::Error;
};

}  // namespace permsyn

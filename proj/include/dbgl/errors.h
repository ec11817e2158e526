#pragma once

#include <stdexcept>
#include <string>

namespace dbgl {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied values (labels, configs, ratios).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; the message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class CompletenessError : public Error {
 public:
  using Error::Error;
};

// Non-finite input where a finite value is required.
class DataError : public Error {
 public:
  using Error::Error;
};

class SizingError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input (e.g. single-class AUROC).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dbgl

#pragma once

#include <stdexcept>
#include <string>

namespace modalign {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Manifest rows or schema that cannot be ingested.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A modality outside the view's allowed subset was requested.
class ModalityMasked : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Loss became NaN or infinite during optimisation.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace modalign

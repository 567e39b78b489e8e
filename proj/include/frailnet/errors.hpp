#pragma once

#include <stdexcept>
#include <string>

namespace frailnet {

/** Base class for all library errors. */
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/** Malformed or inconsistent input data (CSV, records, schema). */
struct DataError : Error {
  using Error::Error;
};

struct MissingColumnError : DataError {
  explicit MissingColumnError(const std::string& column)
      : DataError("missing column: " + column) {}
};

struct NonPositiveTimeError : DataError {
  NonPositiveTimeError(long row, double value)
      : DataError("non-positive time " + std::to_string(value) + " at data row " +
                  std::to_string(row)) {}
};

struct InvalidStatusError : DataError {
  InvalidStatusError(long row, const std::string& value)
      : DataError("status must be 0 or 1, got '" + value + "' at data row " +
                  std::to_string(row)) {}
};

struct RaggedRowError : DataError {
  RaggedRowError(long row, std::size_t got, std::size_t want)
      : DataError("row " + std::to_string(row) + " has " + std::to_string(got) +
                  " fields, expected " + std::to_string(want)) {}
};

struct ParseError : DataError {
  ParseError(long row, const std::string& column, const std::string& value)
      : DataError("cannot parse '" + value + "' in column " + column + " at data row " +
                  std::to_string(row)) {}
};

struct IncompleteAssignmentError : DataError {
  IncompleteAssignmentError(std::size_t assigned, std::size_t records)
      : DataError("split assigns " + std::to_string(assigned) + " records, dataset has " +
                  std::to_string(records)) {}
};

/** Invalid argument to a numerical routine. */
struct InvalidArgumentError : Error {
  using Error::Error;
};

struct NonPositiveAlphaError : InvalidArgumentError {
  explicit NonPositiveAlphaError(double alpha)
      : InvalidArgumentError("alpha must be positive, got " + std::to_string(alpha)) {}
};

struct ShapeMismatchError : InvalidArgumentError {
  using InvalidArgumentError::InvalidArgumentError;
};

/** Backward called with a tape whose shapes do not match the parameters. */
struct StaleTapeError : InvalidArgumentError {
  using InvalidArgumentError::InvalidArgumentError;
};

struct CensoredRecordInBatchError : InvalidArgumentError {
  explicit CensoredRecordInBatchError(int record)
      : InvalidArgumentError("minibatch contains censored record " + std::to_string(record) +
                             "; batches must hold event records only") {}
};

struct UnknownClusterSizeError : InvalidArgumentError {
  explicit UnknownClusterSizeError(int cluster)
      : InvalidArgumentError("no positive population size for cluster " +
                             std::to_string(cluster)) {}
};

struct NoEventsError : Error {
  NoEventsError() : Error("dataset has no events") {}
};

struct BaselineUndefinedAtTimeError : Error {
  explicit BaselineUndefinedAtTimeError(double t)
      : Error("hazard increment undefined at t=" + std::to_string(t) +
              "; not an estimated event time") {}
};

struct UnknownClusterError : Error {
  explicit UnknownClusterError(const std::string& label)
      : Error("cluster '" + label + "' not present in the fitted model") {}
};

/** Numerical failure during fitting. */
struct FitError : Error {
  using Error::Error;
};

struct NonFiniteLossError : FitError {
  explicit NonFiniteLossError(int epoch)
      : FitError("loss became non-finite at epoch " + std::to_string(epoch)) {}
};

struct BracketFailureError : FitError {
  using FitError::FitError;
};

struct NoComparablePairsError : Error {
  NoComparablePairsError() : Error("no comparable pairs for concordance") {}
};

}  // namespace frailnet

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svf {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A variable or penalty parameter was referenced but no value was supplied.
struct UnboundVariable : Error {
  explicit UnboundVariable(const std::string& name)
      : Error("unbound variable: " + name), name(name) {}
  std::string name;
};

// Evaluation produced NaN or infinity. Signals a degenerate iterate to the
// solver, which reacts by shrinking its step.
struct NonFiniteResult : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(std::size_t line, std::size_t col, const std::string& detail)
      : Error("parse error at " + std::to_string(line) + ":" +
              std::to_string(col) + ": " + detail),
        line(line), col(col), detail(detail) {}
  std::size_t line, col;
  std::string detail;
};

struct DataError : Error {
  using Error::Error;
};

struct FileNotFound : DataError {
  explicit FileNotFound(const std::string& path)
      : DataError("cannot open file: " + path), path(path) {}
  std::string path;
};

struct TooFewRows : DataError {
  using DataError::DataError;
};

struct MissingColumn : DataError {
  explicit MissingColumn(const std::string& name)
      : DataError("missing column: " + name), name(name) {}
  std::string name;
};

// Measurement coordinate outside its grid's [min, max].
struct OutOfDomain : DataError {
  OutOfDomain(std::size_t row, const std::string& why)
      : DataError("row " + std::to_string(row) + ": " + why), row(row) {}
  std::size_t row;
};

struct CompileError : Error {
  using Error::Error;
};

struct UnknownSymbol : CompileError {
  explicit UnknownSymbol(const std::string& name)
      : CompileError("unknown symbol: " + name), name(name) {}
  std::string name;
};

struct IncompatibleGrid : CompileError {
  using CompileError::CompileError;
};

struct NonScalarEquation : CompileError {
  using CompileError::CompileError;
};

// Surrogate fit with mu = 0 on rank-deficient history; caller must raise mu.
struct SingularSystem : Error {
  using Error::Error;
};

struct WireError : Error {
  using Error::Error;
};

struct MalformedFrame : WireError {
  using WireError::WireError;
};

struct VersionError : WireError {
  using WireError::WireError;
};

// Socket-level failure: refused, reset, or closed mid-exchange.
struct ConnectionError : Error {
  using Error::Error;
};

// Deadline exceeded while connecting, sending, or awaiting a reply.
struct TimeoutError : ConnectionError {
  using ConnectionError::ConnectionError;
};

// A remote solve raised; carries the worker-side message.
struct SolveFailure : Error {
  using Error::Error;
};

// Every endpoint failed for some job; raised after per-job failover.
struct WorkerUnreachable : Error {
  using Error::Error;
};

}  // namespace svf

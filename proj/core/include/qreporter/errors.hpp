#pragma once

#include <stdexcept>
#include <string>

namespace qreporter {

/// Error families; the CLI maps each to a distinct exit code.
enum class ErrorKind {
  domain,       // invalid physical input (bad field, negative time, ...)
  geometry,     // coincident sites, degenerate radius, misaligned field
  no_solution,  // inverse problem has no consistent answer
  schema,       // malformed or version-mismatched file
  convergence,  // optimizer failed or ran out of budget
  dimension,    // Hilbert space too large
  channel,      // pulse targets a channel absent from the system
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorKind::domain, w) {}
};
struct GeometryError : Error {
  explicit GeometryError(const std::string& w) : Error(ErrorKind::geometry, w) {}
};
struct FieldMisalignmentError : GeometryError {
  using GeometryError::GeometryError;
};
struct NoSolutionError : Error {
  explicit NoSolutionError(const std::string& w) : Error(ErrorKind::no_solution, w) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& w) : Error(ErrorKind::schema, w) {}
};
struct ConvergenceError : Error {
  explicit ConvergenceError(const std::string& w) : Error(ErrorKind::convergence, w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::dimension, w) {}
};
struct ChannelError : Error {
  explicit ChannelError(const std::string& w) : Error(ErrorKind::channel, w) {}
};

}  // namespace qreporter

#pragma once

#include <stdexcept>
#include <string>

namespace advdist {

/// Coarse failure category; the CLI maps each category onto a process exit code.
enum class ErrorKind {
  validation,
  format,
  shape,
  lookup,
  unsupported,
  init_failure,
  exhaustion,
  degenerate_data,
  conflict,
  io,
  adapter,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

#define ADVDIST_DEFINE_ERROR(Name, Kind)                                     \
  class Name : public Error {                                                \
  public:                                                                    \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

ADVDIST_DEFINE_ERROR(ValidationError, validation)
ADVDIST_DEFINE_ERROR(FormatError, format)
ADVDIST_DEFINE_ERROR(ShapeError, shape)
ADVDIST_DEFINE_ERROR(LookupError, lookup)
ADVDIST_DEFINE_ERROR(UnsupportedOperation, unsupported)
ADVDIST_DEFINE_ERROR(InitFailure, init_failure)
ADVDIST_DEFINE_ERROR(ExhaustionError, exhaustion)
ADVDIST_DEFINE_ERROR(DegenerateDataError, degenerate_data)
ADVDIST_DEFINE_ERROR(ConflictError, conflict)
ADVDIST_DEFINE_ERROR(IoError, io)
ADVDIST_DEFINE_ERROR(AdapterError, adapter)

#undef ADVDIST_DEFINE_ERROR

/// Exit codes: 0 success, 2 validation, 3 I/O, 4 classifier-adapter failure.
inline int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::io:
      return 3;
    case ErrorKind::adapter:
      return 4;
    default:
      return 2;
  }
}

}  // namespace advdist

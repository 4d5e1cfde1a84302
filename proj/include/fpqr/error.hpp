#pragma once

#include <stdexcept>
#include <string>

namespace fpqr {

enum class ErrorKind {
  Domain,
  Shape,
  Conditioning,
  Convergence,
  Degenerate,
  Size,
  Parse,
  Config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Conditioning: return "conditioning error";
    case ErrorKind::Convergence: return "convergence error";
    case ErrorKind::Degenerate: return "degenerate error";
    case ErrorKind::Size: return "size error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Config: return "config error";
  }
  return "error";
}

/// Base class for every error raised by the library. The kind lets callers
/// branch without a cascade of catch clauses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FPQR_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

FPQR_DEFINE_ERROR(DomainError, Domain)
FPQR_DEFINE_ERROR(ShapeError, Shape)
FPQR_DEFINE_ERROR(ConditioningError, Conditioning)
FPQR_DEFINE_ERROR(DegenerateError, Degenerate)
FPQR_DEFINE_ERROR(SizeError, Size)
FPQR_DEFINE_ERROR(ParseError, Parse)
FPQR_DEFINE_ERROR(ConfigError, Config)

#undef FPQR_DEFINE_ERROR

}  // namespace fpqr

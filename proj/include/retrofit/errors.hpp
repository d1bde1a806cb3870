#pragma once

#include <stdexcept>
#include <string>

namespace retrofit {

enum class ErrorKind {
  kDimensionMismatch,
  kIllPosed,
  kNumerical,
  kEvaluationAtPole,
  kSampling,
  kUnstabilizable,
  kAssumptionViolation,
  kConstruction,
  kDivergence,
  kParse,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimensionMismatch: return "dimension mismatch";
    case ErrorKind::kIllPosed: return "ill-posed interconnection";
    case ErrorKind::kNumerical: return "numerical failure";
    case ErrorKind::kEvaluationAtPole: return "evaluation at pole";
    case ErrorKind::kSampling: return "sampling failure";
    case ErrorKind::kUnstabilizable: return "synthesis failure";
    case ErrorKind::kAssumptionViolation: return "assumption violation";
    case ErrorKind::kConstruction: return "construction failure";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kParse: return "parse error";
  }
  return "error";
}

/// Single exception type for the library; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        detail_(what) {}

  ErrorKind kind() const { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace retrofit

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tvol {

enum class ErrorKind {
  IoFailure,
  MalformedHeader,
  UnsupportedDatatype,
  TruncatedData,
  NonFiniteData,
  GeometryMismatch,
  PreconditionViolation,
  SizeMismatch,
  InvalidGraph,
  ShapeMismatch,
  ExecutorFailure,
  CountMismatch,
  DecisionMismatch,
  BothEmpty,
  TooFewSubjects,
  InvalidConfig,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::TruncatedData: return "TruncatedData";
    case ErrorKind::NonFiniteData: return "NonFiniteData";
    case ErrorKind::GeometryMismatch: return "GeometryMismatch";
    case ErrorKind::PreconditionViolation: return "PreconditionViolation";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::InvalidGraph: return "InvalidGraph";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ExecutorFailure: return "ExecutorFailure";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::DecisionMismatch: return "DecisionMismatch";
    case ErrorKind::BothEmpty: return "BothEmpty";
    case ErrorKind::TooFewSubjects: return "TooFewSubjects";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tvol

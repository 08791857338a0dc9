#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cranioclip {

enum class ErrorCode {
  MalformedHeader,
  UnsupportedDatatype,
  TruncatedPayload,
  Io,
  DegenerateInput,
  ShapeMismatch,
  InvalidArgument,
  NonFinite,
  CycleDetected,
  NonScalarLoss,
  IncompatibleCheckpoint,
  EmptyInput,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "malformed header";
    case ErrorCode::UnsupportedDatatype: return "unsupported datatype";
    case ErrorCode::TruncatedPayload: return "truncated payload";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::DegenerateInput: return "degenerate input";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::CycleDetected: return "cycle detected";
    case ErrorCode::NonScalarLoss: return "non-scalar loss";
    case ErrorCode::IncompatibleCheckpoint: return "incompatible checkpoint";
    case ErrorCode::EmptyInput: return "empty input";
  }
  return "unknown error";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can tell error kinds apart without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace cranioclip

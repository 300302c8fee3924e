#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace denseflow {

enum class ErrorCode {
  InvalidInput,
  OutOfBounds,
  FileNotFound,
  Io,
  Format,
  BadMagic,
  Truncated,
  DimensionMismatch,
  NonFiniteValue,
  DegenerateFit,
  InterpolationImpossible,
  UndefinedMetric,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid input";
    case ErrorCode::OutOfBounds: return "out of bounds";
    case ErrorCode::FileNotFound: return "file not found";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::Format: return "format error";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::Truncated: return "truncated file";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::NonFiniteValue: return "non-finite value";
    case ErrorCode::DegenerateFit: return "degenerate fit";
    case ErrorCode::InterpolationImpossible: return "interpolation impossible";
    case ErrorCode::UndefinedMetric: return "undefined metric";
  }
  return "unknown error";
}

/// Single exception type for the library; `code()` distinguishes the cases.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  bool is_io() const noexcept {
    return code_ == ErrorCode::FileNotFound || code_ == ErrorCode::Io ||
           code_ == ErrorCode::Format || code_ == ErrorCode::BadMagic ||
           code_ == ErrorCode::Truncated;
  }

 private:
  ErrorCode code_;
};

/// An Error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause), stage_(std::move(stage)), message_(stage_ + " stage: " + cause.what()) {}

  const std::string& stage() const noexcept { return stage_; }
  const char* what() const noexcept override { return message_.c_str(); }

 private:
  std::string stage_;
  std::string message_;
};

}  // namespace denseflow

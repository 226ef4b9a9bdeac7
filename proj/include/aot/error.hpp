#pragma once

#include <stdexcept>
#include <string>

namespace aot {

enum class ErrorCode {
  kInvalidArgument = 1,
  kNotFound,
  kShapeMismatch,
  kIncompatibleCheckpoint,
  kConfig,
  kDivergence,
  kDecode,
  kUnreachableBucket,
  kIo,
  kInternal,
};

/// Base exception for every failure raised by the core library. The code
/// survives the trip through the C API as an aot_status value.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorCode::kShapeMismatch, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& what) : Error(ErrorCode::kDecode, what) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error(ErrorCode::kDivergence, what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace aot

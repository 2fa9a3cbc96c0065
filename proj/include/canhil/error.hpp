#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace canhil {

enum class ErrorCode {
  InvalidFrame,
  StuffError,
  CrcError,
  FormError,
  DuplicateId,
  PastEvent,
  UnknownNode,
  UnknownSensor,
  ConflictingAttack,
  InvalidProfile,
  UnknownHandle,
  ParseError,
  EmptyTrace,
  DimensionMismatch,
  ModelNotLoaded,
  InsufficientData,
  ValidationError,
  ScriptError,
  UnknownOp,
  EngineBusy,
  CaptureOverflow,
  AuthFailed,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// All library failures surface as this exception; `code()` is the
// machine-readable part carried over the control protocol.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace canhil

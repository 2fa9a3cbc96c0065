#include "canhil/error.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "canhil/labels.hpp"

namespace canhil {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidFrame: return "InvalidFrame";
    case ErrorCode::StuffError: return "StuffError";
    case ErrorCode::CrcError: return "CrcError";
    case ErrorCode::FormError: return "FormError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::PastEvent: return "PastEvent";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::UnknownSensor: return "UnknownSensor";
    case ErrorCode::ConflictingAttack: return "ConflictingAttack";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::UnknownHandle: return "UnknownHandle";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ModelNotLoaded: return "ModelNotLoaded";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::ScriptError: return "ScriptError";
    case ErrorCode::UnknownOp: return "UnknownOp";
    case ErrorCode::EngineBusy: return "EngineBusy";
    case ErrorCode::CaptureOverflow: return "CaptureOverflow";
    case ErrorCode::AuthFailed: return "AuthFailed";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

std::optional<TrafficClass> parse_traffic_class(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "benign" || lower == "r" || lower == "normal") return TrafficClass::Benign;
  if (lower == "dos" || lower == "flood") return TrafficClass::DoS;
  if (lower == "fuzzing" || lower == "fuzz" || lower == "fuzzy") return TrafficClass::Fuzzing;
  if (lower == "spoof" || lower == "spoofing" || lower == "rpm-spoof" || lower == "rpm" ||
      lower == "gear")
    return TrafficClass::Spoof;
  return std::nullopt;
}

}  // namespace canhil

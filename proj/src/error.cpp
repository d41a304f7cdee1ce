#include "beamforge/error.hpp"

namespace beamforge {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::InvalidParams: return "InvalidParams";
  case ErrorCode::NotDivisible: return "NotDivisible";
  case ErrorCode::CorruptHeader: return "CorruptHeader";
  case ErrorCode::TruncatedData: return "TruncatedData";
  case ErrorCode::IoError: return "IoError";
  case ErrorCode::NonPositiveFrequency: return "NonPositiveFrequency";
  case ErrorCode::BadRange: return "BadRange";
  case ErrorCode::ShiftExceedsData: return "ShiftExceedsData";
  case ErrorCode::BadLength: return "BadLength";
  case ErrorCode::NonPositivePeriod: return "NonPositivePeriod";
  case ErrorCode::DuplicateBeamId: return "DuplicateBeamId";
  case ErrorCode::LockTimeout: return "LockTimeout";
  case ErrorCode::LockStolen: return "LockStolen";
  case ErrorCode::NoWork: return "NoWork";
  case ErrorCode::NotClaimant: return "NotClaimant";
  case ErrorCode::ParseError: return "ParseError";
  case ErrorCode::FatalConfig: return "FatalConfig";
  case ErrorCode::SlotTimeout: return "SlotTimeout";
  case ErrorCode::PointingTooLarge: return "PointingTooLarge";
  case ErrorCode::UnknownBeam: return "UnknownBeam";
  }
  return "Unknown";
}

} // namespace beamforge

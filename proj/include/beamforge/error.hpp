#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace beamforge {

enum class ErrorCode {
  InvalidParams,
  NotDivisible,
  CorruptHeader,
  TruncatedData,
  IoError,
  NonPositiveFrequency,
  BadRange,
  ShiftExceedsData,
  BadLength,
  NonPositivePeriod,
  DuplicateBeamId,
  LockTimeout,
  LockStolen,
  NoWork,
  NotClaimant,
  ParseError,
  FatalConfig,
  SlotTimeout,
  PointingTooLarge,
  UnknownBeam,
};

std::string_view error_name(ErrorCode code) noexcept;

// Every domain failure in the library is reported through this type; the
// code is what callers branch on, the message is for humans.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string &message() const noexcept { return message_; }

private:
  ErrorCode code_;
  std::string message_;
};

} // namespace beamforge

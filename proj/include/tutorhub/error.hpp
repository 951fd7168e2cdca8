#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tutorhub {

enum class ErrorCode {
  // protocol
  InvalidEnvelope,
  MalformedFrame,
  UnknownKind,
  VersionMismatch,
  SequenceViolation,
  // session
  SessionNotFound,
  SessionClosed,
  TutorSeatTaken,
  InvalidToken,
  UnknownPeer,
  // signaling
  IllegalTransition,
  NotPaired,
  RoleViolation,
  // quality / alerts / avatar
  ZoomTargetNotInFeeds,
  UnknownStudent,
  InvalidRate,
  EmptyText,
  InvalidArgument,
  // infrastructure
  StorageFailure,
  ConfigInvalid,
  BindFailure,
  ConnectionFailure,
  ScenarioParseError,
};

std::string_view to_string(ErrorCode code);

// All recoverable failures surface as this exception type; callers switch on
// code() rather than on the message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}
  explicit Error(ErrorCode code)
      : std::runtime_error(std::string(to_string(code))), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace tutorhub

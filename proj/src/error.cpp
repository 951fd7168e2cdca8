#include "tutorhub/error.hpp"

#include <array>

namespace tutorhub {

namespace {

constexpr std::array<std::string_view, 23> kNames = {
    "InvalidEnvelope",   "MalformedFrame",    "UnknownKind",
    "VersionMismatch",   "SequenceViolation", "SessionNotFound",
    "SessionClosed",     "TutorSeatTaken",    "InvalidToken",
    "UnknownPeer",       "IllegalTransition", "NotPaired",
    "RoleViolation",     "ZoomTargetNotInFeeds", "UnknownStudent",
    "InvalidRate",       "EmptyText",         "InvalidArgument",
    "StorageFailure",    "ConfigInvalid",     "BindFailure",
    "ConnectionFailure", "ScenarioParseError",
};

static_assert(kNames.size() == static_cast<std::size_t>(ErrorCode::ScenarioParseError) + 1);

}  // namespace

std::string_view to_string(ErrorCode code) {
  return kNames[static_cast<std::size_t>(code)];
}

}  // namespace tutorhub

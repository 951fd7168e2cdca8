#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "tutorhub/alerts.hpp"
#include "tutorhub/avatar.hpp"
#include "tutorhub/quality.hpp"
#include "tutorhub/types.hpp"

namespace tutorhub {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxChatChars = 2000;

enum class MessageKind {
  Join,
  JoinAck,
  Leave,
  RosterUpdate,
  Offer,
  Answer,
  IceCandidate,
  QualityRequest,
  Chat,
  AvatarCommand,
  Telemetry,
  Alert,
  Heartbeat,
  Error,
};

inline constexpr std::size_t kMessageKindCount = 14;

std::string_view to_string(MessageKind kind);
std::optional<MessageKind> parse_message_kind(std::string_view text);
std::optional<Role> parse_role(std::string_view text);
std::optional<PresenceStatus> parse_presence(std::string_view text);

// Payload bodies, one per MessageKind and declared in the same order so the
// variant index is the kind.
namespace msg {

struct RosterEntry {
  PeerId peer;
  std::string alias;
  Role role = Role::Student;
  PresenceStatus status = PresenceStatus::Connected;
  friend bool operator==(const RosterEntry&, const RosterEntry&) = default;
};

struct Join {
  std::string alias;
  Role role = Role::Student;
  friend bool operator==(const Join&, const Join&) = default;
};

struct JoinAck {
  PeerId peer;
  Role role = Role::Student;
  std::vector<RosterEntry> roster;
  std::vector<std::string> ice_servers;
  friend bool operator==(const JoinAck&, const JoinAck&) = default;
};

struct Leave {
  PeerId peer;
  std::string reason;
  friend bool operator==(const Leave&, const Leave&) = default;
};

struct RosterUpdate {
  std::vector<RosterEntry> roster;
  friend bool operator==(const RosterUpdate&, const RosterUpdate&) = default;
};

struct Offer {
  PeerId to;
  std::string sdp;
  friend bool operator==(const Offer&, const Offer&) = default;
};

struct Answer {
  PeerId to;
  std::string sdp;
  friend bool operator==(const Answer&, const Answer&) = default;
};

struct IceCandidate {
  PeerId to;
  std::string candidate;
  friend bool operator==(const IceCandidate&, const IceCandidate&) = default;
};

// Tutor -> server: tier High on target zooms it, anything else on the zoomed
// target (or an empty target) un-zooms. Server -> student: the tier to
// re-offer with.
struct QualityRequest {
  PeerId target;
  QualityTier tier;
  friend bool operator==(const QualityRequest&, const QualityRequest&) = default;
};

struct Chat {
  PeerId from;
  PeerId to;  // kBroadcastPeer for everyone
  std::string text;
  friend bool operator==(const Chat&, const Chat&) = default;
};

using AvatarCommand = ::tutorhub::AvatarCommand;

struct Telemetry {
  TelemetryEvent event;
  friend bool operator==(const Telemetry&, const Telemetry&) = default;
};

struct Alert {
  ::tutorhub::Alert alert;
  std::string message;
  friend bool operator==(const Alert&, const Alert&) = default;
};

struct Heartbeat {
  friend bool operator==(const Heartbeat&, const Heartbeat&) = default;
};

struct Error {
  std::string code;
  std::string reason;
  friend bool operator==(const Error&, const Error&) = default;
};

using Payload =
    std::variant<Join, JoinAck, Leave, RosterUpdate, Offer, Answer, IceCandidate,
                 QualityRequest, Chat, AvatarCommand, Telemetry, Alert,
                 Heartbeat, Error>;

static_assert(std::variant_size_v<Payload> == kMessageKindCount);

}  // namespace msg

struct Envelope {
  int version = kProtocolVersion;
  std::uint64_t seq = 1;
  TimestampMs ts = 0;
  SessionId session;
  PeerId sender;
  msg::Payload payload;

  MessageKind kind() const {
    return static_cast<MessageKind>(payload.index());
  }

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

// Canonical single-line JSON text with field order
// v, seq, ts, session, sender, type, payload. Throws InvalidEnvelope.
std::string encode(const Envelope& envelope);

// Throws MalformedFrame, UnknownKind, VersionMismatch or InvalidEnvelope;
// never returns a partially validated envelope.
Envelope decode(std::string_view frame);

// Payload-only codec, used for event-log bodies.
std::string encode_payload(const msg::Payload& payload);
msg::Payload decode_payload(MessageKind kind, std::string_view body);

// Throws InvalidEnvelope describing the first violated invariant.
void validate(const Envelope& envelope);

// Number of Unicode code points in UTF-8 text.
std::size_t utf8_length(std::string_view text);

// Accepts a stream iff every sender's seq runs 1, 2, 3, ... without gaps.
class SequenceValidator {
 public:
  // Throws SequenceViolation on a gap or repeat.
  void accept(const PeerId& sender, std::uint64_t seq);
  void accept(const Envelope& envelope) { accept(envelope.sender, envelope.seq); }

 private:
  std::unordered_map<PeerId, std::uint64_t> last_;
};

// Stamps per-sender seq numbers on outgoing envelopes of one connection.
class SequenceStamper {
 public:
  std::uint64_t next(const PeerId& sender) { return ++last_[sender]; }

 private:
  std::unordered_map<PeerId, std::uint64_t> last_;
};

}  // namespace tutorhub

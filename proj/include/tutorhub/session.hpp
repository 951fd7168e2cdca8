#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tutorhub/protocol.hpp"
#include "tutorhub/types.hpp"

namespace tutorhub {

enum class SessionState { Open, Closed };

struct PresenceThresholds {
  TimestampMs interval_ms = 15'000;
  TimestampMs stale_ms = 45'000;
  TimestampMs disconnect_ms = 90'000;

  // Throws ConfigInvalid unless 0 < interval < stale < disconnect.
  void validate() const;
};

PresenceStatus presence_status(TimestampMs last_heartbeat, TimestampMs now,
                               const PresenceThresholds& thresholds);

struct Presence {
  PeerId peer;
  TimestampMs last_heartbeat = 0;
  PresenceStatus status = PresenceStatus::Connected;
};

struct Member {
  PeerId id;
  std::string alias;
  Role role = Role::Student;
  std::string token;
  TimestampMs last_heartbeat = 0;
};

struct JoinOutcome {
  PeerId peer;
  std::string token;
  bool takeover = false;
};

// Roster, credentials and lifecycle of one class session. Pure state: the
// coordinator owns locking, logging and fan-out.
class Session {
 public:
  Session(SessionId id, std::string tutor_alias, std::string tutor_token,
          TimestampMs created_at);

  const SessionId& id() const { return id_; }
  SessionState state() const { return state_; }
  bool open() const { return state_ == SessionState::Open; }
  TimestampMs created_at() const { return created_at_; }
  const std::string& tutor_alias() const { return tutor_alias_; }
  const std::string& tutor_token() const { return tutor_token_; }
  const PeerId& tutor_peer() const { return tutor_peer_; }
  bool tutor_seated() const { return tutor_.has_value(); }

  // Tutor joins need the tutor token, and takeover when the seat is held.
  // Students get student_token. Throws SessionClosed, InvalidToken,
  // TutorSeatTaken or InvalidArgument (empty alias).
  JoinOutcome join(const std::string& alias, Role role,
                   const std::optional<std::string>& token, bool takeover,
                   std::string student_token, TimestampMs now);

  // Throws UnknownPeer.
  Member leave(const PeerId& peer);

  Presence heartbeat(const PeerId& peer, TimestampMs now);
  Presence presence(const PeerId& peer, TimestampMs now,
                    const PresenceThresholds& thresholds) const;
  // Members whose presence has reached Disconnected.
  std::vector<PeerId> expired(TimestampMs now,
                              const PresenceThresholds& thresholds) const;

  // Returns false when already closed. Throws InvalidToken.
  bool close(const std::string& token);

  const Member* member(const PeerId& peer) const;
  const Member* member_by_token(const std::string& token) const;
  std::vector<PeerId> students() const;  // ascending
  std::vector<PeerId> members() const;   // tutor first, then students
  std::vector<msg::RosterEntry> roster(TimestampMs now,
                                       const PresenceThresholds& thresholds) const;

 private:
  Member& find(const PeerId& peer);
  const Member* find_ptr(const PeerId& peer) const;

  SessionId id_;
  std::string tutor_alias_;
  std::string tutor_token_;
  PeerId tutor_peer_{"tutor"};
  TimestampMs created_at_;
  SessionState state_ = SessionState::Open;
  std::optional<Member> tutor_;
  std::map<PeerId, Member> students_;
  unsigned next_student_ = 1;
};

}  // namespace tutorhub

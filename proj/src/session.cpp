#include "tutorhub/session.hpp"

#include <cstdio>

#include "tutorhub/error.hpp"

namespace tutorhub {

void PresenceThresholds::validate() const {
  if (!(interval_ms > 0 && interval_ms < stale_ms && stale_ms < disconnect_ms)) {
    throw Error(ErrorCode::ConfigInvalid,
                "heartbeat thresholds must satisfy 0 < interval < stale < disconnect");
  }
}

PresenceStatus presence_status(TimestampMs last_heartbeat, TimestampMs now,
                               const PresenceThresholds& t) {
  const TimestampMs silent = now - last_heartbeat;
  if (silent >= t.disconnect_ms) return PresenceStatus::Disconnected;
  if (silent >= t.stale_ms) return PresenceStatus::Stale;
  return PresenceStatus::Connected;
}

Session::Session(SessionId id, std::string tutor_alias, std::string tutor_token,
                 TimestampMs created_at)
    : id_(std::move(id)),
      tutor_alias_(std::move(tutor_alias)),
      tutor_token_(std::move(tutor_token)),
      created_at_(created_at) {}

JoinOutcome Session::join(const std::string& alias, Role role,
                          const std::optional<std::string>& token, bool takeover,
                          std::string student_token, TimestampMs now) {
  if (!open()) throw Error(ErrorCode::SessionClosed, id_.str());
  if (alias.empty()) throw Error(ErrorCode::InvalidArgument, "alias must not be empty");

  if (role == Role::Tutor) {
    if (!token || *token != tutor_token_) {
      throw Error(ErrorCode::InvalidToken, "tutor join needs the tutor token");
    }
    const bool seated = tutor_.has_value();
    if (seated && !takeover) throw Error(ErrorCode::TutorSeatTaken, id_.str());
    tutor_ = Member{tutor_peer_, alias, Role::Tutor, tutor_token_, now};
    return {tutor_peer_, tutor_token_, seated};
  }

  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04u", next_student_++);
  PeerId peer{buf};
  students_[peer] = Member{peer, alias, Role::Student, student_token, now};
  return {peer, std::move(student_token), false};
}

Member Session::leave(const PeerId& peer) {
  if (tutor_ && tutor_->id == peer) {
    Member m = *tutor_;
    tutor_.reset();
    return m;
  }
  auto it = students_.find(peer);
  if (it == students_.end()) throw Error(ErrorCode::UnknownPeer, peer.str());
  Member m = std::move(it->second);
  students_.erase(it);
  return m;
}

Member& Session::find(const PeerId& peer) {
  if (tutor_ && tutor_->id == peer) return *tutor_;
  auto it = students_.find(peer);
  if (it == students_.end()) throw Error(ErrorCode::UnknownPeer, peer.str());
  return it->second;
}

const Member* Session::find_ptr(const PeerId& peer) const {
  if (tutor_ && tutor_->id == peer) return &*tutor_;
  auto it = students_.find(peer);
  return it == students_.end() ? nullptr : &it->second;
}

Presence Session::heartbeat(const PeerId& peer, TimestampMs now) {
  Member& m = find(peer);
  if (now > m.last_heartbeat) m.last_heartbeat = now;
  return {peer, m.last_heartbeat, PresenceStatus::Connected};
}

Presence Session::presence(const PeerId& peer, TimestampMs now,
                           const PresenceThresholds& thresholds) const {
  const Member* m = find_ptr(peer);
  if (!m) throw Error(ErrorCode::UnknownPeer, peer.str());
  return {peer, m->last_heartbeat, presence_status(m->last_heartbeat, now, thresholds)};
}

std::vector<PeerId> Session::expired(TimestampMs now,
                                     const PresenceThresholds& thresholds) const {
  std::vector<PeerId> out;
  for (const auto& peer : members()) {
    const Member* m = find_ptr(peer);
    if (presence_status(m->last_heartbeat, now, thresholds) ==
        PresenceStatus::Disconnected) {
      out.push_back(peer);
    }
  }
  return out;
}

bool Session::close(const std::string& token) {
  if (token != tutor_token_) throw Error(ErrorCode::InvalidToken, "close needs the tutor token");
  if (!open()) return false;
  state_ = SessionState::Closed;
  return true;
}

const Member* Session::member(const PeerId& peer) const { return find_ptr(peer); }

const Member* Session::member_by_token(const std::string& token) const {
  if (tutor_ && tutor_->token == token) return &*tutor_;
  for (const auto& [peer, m] : students_) {
    if (m.token == token) return &m;
  }
  return nullptr;
}

std::vector<PeerId> Session::students() const {
  std::vector<PeerId> out;
  out.reserve(students_.size());
  for (const auto& [peer, m] : students_) out.push_back(peer);
  return out;
}

std::vector<PeerId> Session::members() const {
  std::vector<PeerId> out;
  if (tutor_) out.push_back(tutor_->id);
  for (const auto& [peer, m] : students_) out.push_back(peer);
  return out;
}

std::vector<msg::RosterEntry> Session::roster(TimestampMs now,
                                              const PresenceThresholds& t) const {
  std::vector<msg::RosterEntry> out;
  for (const auto& peer : members()) {
    const Member* m = find_ptr(peer);
    out.push_back({m->id, m->alias, m->role, presence_status(m->last_heartbeat, now, t)});
  }
  return out;
}

}  // namespace tutorhub

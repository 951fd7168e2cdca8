#include "tutorhub/coordinator.hpp"

#include <algorithm>
#include <cstdio>
#include <mutex>
#include <random>

#include <json.hpp>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

using Json = nlohmann::ordered_json;

std::string lifecycle(const char* event, Json extra = Json::object()) {
  Json j;
  j["event"] = event;
  for (auto& [k, v] : extra.items()) j[k] = v;
  return j.dump();
}

}  // namespace

std::string random_token() {
  thread_local std::random_device device;
  char buf[33];
  for (int i = 0; i < 4; ++i) {
    std::snprintf(buf + i * 8, 9, "%08x", static_cast<unsigned>(device()));
  }
  return std::string(buf, 32);
}

struct Coordinator::Owner {
  Owner(Session s, const AlertRuleConfig& rules)
      : session(std::move(s)), alerts(rules) {}

  mutable std::mutex mutex;
  Session session;
  SignalingRelay relay;
  AlertEngine alerts;
  std::optional<PeerId> zoomed;
  StreamAllocation allocation;
  std::unordered_map<PeerId, TimestampMs> last_contact;
  std::unordered_map<PeerId, std::shared_ptr<PeerSink>> sinks;
};

struct Coordinator::Effects {
  struct Send {
    PeerId to;
    PeerId sender;
    msg::Payload payload;
    std::shared_ptr<PeerSink> sink;  // set when the peer is already unregistered
  };
  struct Drop {
    std::shared_ptr<PeerSink> sink;
    std::string code;
    std::string reason;
  };

  std::vector<PendingRecord> records;
  std::vector<Send> sends;
  std::vector<Drop> drops;

  void log(LogCategory category, std::string subject, std::string body) {
    records.push_back({category, std::move(subject), std::move(body)});
  }
  void send(PeerId to, PeerId sender, msg::Payload payload) {
    sends.push_back({std::move(to), std::move(sender), std::move(payload), nullptr});
  }
  void send_direct(std::shared_ptr<PeerSink> sink, PeerId sender, msg::Payload payload) {
    sends.push_back({PeerId{}, std::move(sender), std::move(payload), std::move(sink)});
  }
};

Coordinator::Coordinator(CoordinatorConfig config, std::shared_ptr<LogStorage> storage,
                         std::shared_ptr<const Clock> clock)
    : config_(std::move(config)), clock_(clock), log_(std::move(storage), clock) {
  config_.alerts.validate();
  config_.tiers.validate();
  config_.presence.validate();
  if (config_.bandwidth_budget_kbps < 0) {
    throw Error(ErrorCode::ConfigInvalid, "bandwidth budget must be non-negative");
  }
  if (!(config_.speech_rate > 0)) {
    throw Error(ErrorCode::ConfigInvalid, "speech rate must be positive");
  }
}

Coordinator::~Coordinator() = default;

std::shared_ptr<Coordinator::Owner> Coordinator::find(const SessionId& session) const {
  std::shared_lock lock(registry_mutex_);
  auto it = owners_.find(session);
  if (it == owners_.end()) throw Error(ErrorCode::SessionNotFound, session.str());
  return it->second;
}

void Coordinator::commit(Owner& owner, Effects& fx) {
  if (!fx.records.empty()) {
    log_.append_batch(owner.session.id(), std::move(fx.records));
  }
  for (auto& s : fx.sends) {
    if (s.sink) {
      s.sink->send(s.sender, std::move(s.payload));
      continue;
    }
    auto it = owner.sinks.find(s.to);
    if (it != owner.sinks.end()) it->second->send(s.sender, std::move(s.payload));
  }
  for (auto& d : fx.drops) d.sink->disconnect(d.code, d.reason);
  fx = Effects{};
}

void Coordinator::require_open(const Owner& owner) const {
  if (!owner.session.open()) {
    throw Error(ErrorCode::SessionClosed, owner.session.id().str());
  }
}

void Coordinator::require_tutor(const Owner& owner, const std::string& token) const {
  if (token == owner.session.tutor_token()) return;
  if (owner.session.member_by_token(token)) {
    throw Error(ErrorCode::RoleViolation, "only the tutor may do this");
  }
  throw Error(ErrorCode::InvalidToken, "unknown token");
}

std::string Coordinator::alias_of(const Owner& owner, const PeerId& peer) const {
  const Member* m = owner.session.member(peer);
  return m ? m->alias : peer.str();
}

void Coordinator::apply_relay(Owner& owner, RelayResult result, Effects& fx) {
  for (const auto& c : result.changes) {
    const Pairing* p = owner.relay.pairing(c.student);
    Json body;
    body["student"] = c.student.str();
    body["from"] = to_string(c.from);
    body["to"] = to_string(c.to);
    body["input"] = to_string(c.input);
    body["tier"] = to_string(p ? p->current_tier : TierName::Low);
    fx.log(LogCategory::Signal, c.student.str(), body.dump());
  }
  for (auto& d : result.deliveries) {
    fx.send(std::move(d.to), std::move(d.sender), std::move(d.payload));
  }
}

void Coordinator::rebalance(Owner& owner, Effects& fx) {
  const auto students = owner.session.students();
  if (owner.zoomed &&
      std::find(students.begin(), students.end(), *owner.zoomed) == students.end()) {
    owner.zoomed.reset();
  }
  owner.allocation = allocate(students, owner.zoomed, config_.bandwidth_budget_kbps,
                              config_.tiers);
  for (const auto& a : owner.allocation.assignments) {
    const Pairing* p = owner.relay.pairing(a.peer);
    if (p && p->state == PairingState::Connected && p->current_tier != a.tier) {
      apply_relay(owner, owner.relay.request_renegotiation(a.peer, config_.tiers[a.tier]),
                  fx);
    }
  }
}

void Coordinator::broadcast_roster(Owner& owner, Effects& fx) {
  msg::RosterUpdate update{owner.session.roster(clock_->now(), config_.presence)};
  for (const auto& [peer, sink] : owner.sinks) {
    fx.send(peer, kServerPeer, update);
  }
}

void Coordinator::emit_alert(Owner& owner, const Alert& alert, Effects& fx) {
  msg::Alert payload{alert, render_alert(alert, alias_of(owner, alert.student))};
  fx.log(LogCategory::Alert, alert.student.str(), encode_payload(payload));
  fx.send(owner.session.tutor_peer(), kServerPeer, std::move(payload));
}

void Coordinator::remove_member(Owner& owner, const PeerId& peer,
                                const std::string& reason, Effects& fx) {
  const Member gone = owner.session.leave(peer);
  if (gone.role == Role::Tutor) {
    apply_relay(owner, owner.relay.close_all(), fx);
    owner.relay.set_tutor(std::nullopt);
    owner.zoomed.reset();
  } else {
    apply_relay(owner, owner.relay.remove_student(peer), fx);
    owner.alerts.remove_student(peer);
    owner.last_contact.erase(peer);
    if (owner.zoomed == peer) owner.zoomed.reset();
    std::unique_lock lock(registry_mutex_);
    token_index_.erase(gone.token);
  }
  Json extra;
  extra["peer"] = peer.str();
  extra["reason"] = reason;
  fx.log(LogCategory::Lifecycle, peer.str(), lifecycle("leave", extra));

  if (auto it = owner.sinks.find(peer); it != owner.sinks.end()) {
    fx.send_direct(it->second, kServerPeer, msg::Leave{peer, reason});
    fx.drops.push_back({it->second, "", reason});
    owner.sinks.erase(it);
  }
}

// ---- lifecycle ------------------------------------------------------------

CreatedSession Coordinator::create_session(const std::string& tutor_alias) {
  if (tutor_alias.empty()) {
    throw Error(ErrorCode::InvalidArgument, "tutor alias must not be empty");
  }
  CreatedSession created{SessionId{random_token()}, random_token()};
  const TimestampMs now = clock_->now();
  auto owner = std::make_shared<Owner>(
      Session(created.id, tutor_alias, created.tutor_token, now), config_.alerts);

  log_.create_session(created.id);
  Json extra;
  extra["tutor_alias"] = tutor_alias;
  log_.append(created.id, LogCategory::Lifecycle, std::string(kSessionSubject),
              lifecycle("created", extra));

  std::unique_lock lock(registry_mutex_);
  if (owners_.contains(created.id) || token_index_.contains(created.tutor_token)) {
    throw Error(ErrorCode::InvalidArgument, "random id collision");
  }
  owners_.emplace(created.id, std::move(owner));
  token_index_.emplace(created.tutor_token, created.id);
  return created;
}

JoinResult Coordinator::join(const SessionId& session, const std::string& alias,
                             Role role, const std::optional<std::string>& token,
                             bool takeover) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  Effects fx;
  const TimestampMs now = clock_->now();

  const std::shared_ptr<PeerSink> previous_tutor_sink =
      role == Role::Tutor && owner->session.tutor_seated()
          ? [&]() -> std::shared_ptr<PeerSink> {
              auto it = owner->sinks.find(owner->session.tutor_peer());
              return it == owner->sinks.end() ? nullptr : it->second;
            }()
          : nullptr;

  JoinOutcome outcome =
      owner->session.join(alias, role, token, takeover, random_token(), now);

  if (role == Role::Tutor) {
    if (outcome.takeover) {
      for (const auto& student : owner->session.students()) {
        fx.send(student, kServerPeer, msg::Leave{outcome.peer, "takeover"});
      }
      apply_relay(*owner, owner->relay.close_all(), fx);
      if (previous_tutor_sink) {
        fx.drops.push_back({previous_tutor_sink, std::string(to_string(ErrorCode::TutorSeatTaken)),
                            "tutor seat taken over"});
        owner->sinks.erase(outcome.peer);
      }
    }
    owner->relay.set_tutor(outcome.peer);
  } else {
    owner->alerts.add_student(outcome.peer, now);
    owner->relay.add_student(outcome.peer);
    std::unique_lock reg(registry_mutex_);
    token_index_.emplace(outcome.token, session);
  }

  Json extra;
  extra["peer"] = outcome.peer.str();
  extra["alias"] = alias;
  extra["role"] = to_string(role);
  if (outcome.takeover) extra["takeover"] = true;
  fx.log(LogCategory::Lifecycle, outcome.peer.str(), lifecycle("join", extra));

  broadcast_roster(*owner, fx);
  rebalance(*owner, fx);
  commit(*owner, fx);

  return {outcome.peer, outcome.token, role,
          owner->session.roster(now, config_.presence), config_.ice_servers};
}

std::vector<msg::RosterEntry> Coordinator::leave(const SessionId& session,
                                                 const PeerId& peer,
                                                 const std::string& reason) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  Effects fx;
  remove_member(*owner, peer, reason, fx);
  broadcast_roster(*owner, fx);
  rebalance(*owner, fx);
  commit(*owner, fx);
  return owner->session.roster(clock_->now(), config_.presence);
}

CloseSummary Coordinator::close_session(const SessionId& session,
                                        const std::string& token) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  Effects fx;
  const bool newly = owner->session.close(token);
  if (newly) {
    apply_relay(*owner, owner->relay.close_all(), fx);
    fx.log(LogCategory::Lifecycle, std::string(kSessionSubject), lifecycle("closed"));
    for (const auto& [peer, sink] : owner->sinks) {
      fx.send(peer, kServerPeer, msg::Leave{peer, "session closed"});
      fx.drops.push_back({sink, "", "session closed"});
    }
    commit(*owner, fx);
    owner->sinks.clear();
  }
  return {session, log_.last_seq(session), !newly};
}

void Coordinator::close_all(const std::string& reason) {
  std::vector<std::shared_ptr<Owner>> owners;
  {
    std::shared_lock lock(registry_mutex_);
    for (const auto& [id, owner] : owners_) owners.push_back(owner);
  }
  for (const auto& owner : owners) {
    std::lock_guard lock(owner->mutex);
    if (!owner->session.open()) continue;
    Effects fx;
    owner->session.close(owner->session.tutor_token());
    apply_relay(*owner, owner->relay.close_all(), fx);
    Json extra;
    extra["reason"] = reason;
    fx.log(LogCategory::Lifecycle, std::string(kSessionSubject), lifecycle("closed", extra));
    for (const auto& [peer, sink] : owner->sinks) {
      fx.send(peer, kServerPeer, msg::Leave{peer, reason});
      fx.drops.push_back({sink, "", reason});
    }
    commit(*owner, fx);
    owner->sinks.clear();
  }
}

// ---- presence -----------------------------------------------------------------

Presence Coordinator::heartbeat(const SessionId& session, const PeerId& peer) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  return owner->session.heartbeat(peer, clock_->now());
}

Presence Coordinator::presence(const SessionId& session, const PeerId& peer) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  return owner->session.presence(peer, clock_->now(), config_.presence);
}

// ---- connections ----------------------------------------------------------------

Credential Coordinator::authenticate(const std::string& token) const {
  std::shared_ptr<Owner> owner;
  {
    std::shared_lock lock(registry_mutex_);
    auto it = token_index_.find(token);
    if (it == token_index_.end()) throw Error(ErrorCode::InvalidToken, "invalid token");
    owner = owners_.at(it->second);
  }
  std::lock_guard lock(owner->mutex);
  const Member* m = owner->session.member_by_token(token);
  if (!m) throw Error(ErrorCode::InvalidToken, "invalid token");
  return {owner->session.id(), m->id, m->role, token};
}

void Coordinator::attach(const Credential& who, std::shared_ptr<PeerSink> sink) {
  auto owner = find(who.session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  const Member* m = owner->session.member(who.peer);
  if (!m || m->token != who.token) throw Error(ErrorCode::InvalidToken, "invalid token");

  Effects fx;
  if (auto it = owner->sinks.find(who.peer); it != owner->sinks.end()) {
    fx.drops.push_back({it->second, "Replaced", "connection replaced"});
  }
  owner->sinks[who.peer] = std::move(sink);
  owner->session.heartbeat(who.peer, clock_->now());
  fx.log(LogCategory::Lifecycle, who.peer.str(), lifecycle("attach"));
  fx.send(who.peer, kServerPeer,
          msg::JoinAck{who.peer, m->role,
                       owner->session.roster(clock_->now(), config_.presence),
                       config_.ice_servers});
  broadcast_roster(*owner, fx);
  commit(*owner, fx);
}

void Coordinator::detach(const Credential& who, const PeerSink* sink) {
  std::shared_ptr<Owner> owner;
  try {
    owner = find(who.session);
  } catch (const Error&) {
    return;
  }
  std::lock_guard lock(owner->mutex);
  auto it = owner->sinks.find(who.peer);
  if (it == owner->sinks.end() || it->second.get() != sink) return;
  owner->sinks.erase(it);
  if (!owner->session.open()) return;
  Effects fx;
  fx.log(LogCategory::Lifecycle, who.peer.str(), lifecycle("detach"));
  commit(*owner, fx);
}

void Coordinator::record_violation(const Credential& who, ErrorCode code,
                                   const std::string& reason) {
  std::shared_ptr<Owner> owner;
  try {
    owner = find(who.session);
  } catch (const Error&) {
    return;
  }
  std::lock_guard lock(owner->mutex);
  if (!owner->session.open()) return;
  Json extra;
  extra["code"] = to_string(code);
  extra["reason"] = reason;
  Effects fx;
  fx.log(LogCategory::Lifecycle, who.peer.str(), lifecycle("violation", extra));
  commit(*owner, fx);
}

void Coordinator::handle(const Credential& who, const Envelope& e) {
  if (e.session != who.session || e.sender != who.peer) {
    throw Error(ErrorCode::RoleViolation, "envelope sender does not match connection");
  }
  switch (e.kind()) {
    case MessageKind::Join: {
      auto owner = find(who.session);
      std::lock_guard lock(owner->mutex);
      require_open(*owner);
      const Member* m = owner->session.member(who.peer);
      if (!m) throw Error(ErrorCode::UnknownPeer, who.peer.str());
      Effects fx;
      fx.send(who.peer, kServerPeer,
              msg::JoinAck{who.peer, m->role,
                           owner->session.roster(clock_->now(), config_.presence),
                           config_.ice_servers});
      commit(*owner, fx);
      return;
    }
    case MessageKind::Leave:
      leave(who.session, who.peer, "left");
      return;
    case MessageKind::Offer: {
      const auto& p = std::get<msg::Offer>(e.payload);
      relay_offer(who.session, who.peer, p.to, p.sdp);
      return;
    }
    case MessageKind::Answer: {
      const auto& p = std::get<msg::Answer>(e.payload);
      relay_answer(who.session, who.peer, p.to, p.sdp);
      return;
    }
    case MessageKind::IceCandidate: {
      const auto& p = std::get<msg::IceCandidate>(e.payload);
      relay_candidate(who.session, who.peer, p.to, p.candidate);
      return;
    }
    case MessageKind::QualityRequest: {
      const auto& p = std::get<msg::QualityRequest>(e.payload);
      std::optional<PeerId> zoom;
      if (!p.target.empty() && p.tier.name == TierName::High) {
        zoom = p.target;
      } else if (!p.target.empty()) {
        auto owner = find(who.session);
        std::lock_guard lock(owner->mutex);
        if (owner->zoomed != p.target) return;  // not zoomed: nothing to undo
      }
      set_zoom(who.session, who.token, zoom);
      return;
    }
    case MessageKind::Chat: {
      const auto& p = std::get<msg::Chat>(e.payload);
      if (p.from != who.peer) {
        throw Error(ErrorCode::RoleViolation, "chat sender does not match connection");
      }
      chat(who.session, who.peer, p.to, p.text);
      return;
    }
    case MessageKind::AvatarCommand: {
      const auto& p = std::get<msg::AvatarCommand>(e.payload);
      dispatch(who.session, who.token, p.target, p.speech_text, p.show_bubble);
      return;
    }
    case MessageKind::Telemetry:
      ingest(who.session, who.peer, std::get<msg::Telemetry>(e.payload).event);
      return;
    case MessageKind::Heartbeat: {
      auto owner = find(who.session);
      std::lock_guard lock(owner->mutex);
      owner->session.heartbeat(who.peer, clock_->now());
      Effects fx;
      fx.send(who.peer, kServerPeer, msg::Heartbeat{});
      commit(*owner, fx);
      return;
    }
    case MessageKind::JoinAck:
    case MessageKind::RosterUpdate:
    case MessageKind::Alert:
    case MessageKind::Error:
      break;
  }
  throw Error(ErrorCode::RoleViolation,
              std::string(to_string(e.kind())) + " is sent by the server only");
}

// ---- signaling & quality ----------------------------------------------------------

void Coordinator::relay_offer(const SessionId& session, const PeerId& from,
                              const PeerId& to, std::string sdp) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  Effects fx;
  apply_relay(*owner, owner->relay.relay_offer(from, to, std::move(sdp)), fx);
  commit(*owner, fx);
}

void Coordinator::relay_answer(const SessionId& session, const PeerId& from,
                               const PeerId& to, std::string sdp) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  Effects fx;
  apply_relay(*owner, owner->relay.relay_answer(from, to, std::move(sdp)), fx);
  rebalance(*owner, fx);
  commit(*owner, fx);
}

void Coordinator::relay_candidate(const SessionId& session, const PeerId& from,
                                  const PeerId& to, std::string candidate) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  Effects fx;
  apply_relay(*owner, owner->relay.relay_candidate(from, to, std::move(candidate)), fx);
  commit(*owner, fx);
}

void Coordinator::request_renegotiation(const SessionId& session,
                                        const std::string& tutor_token,
                                        const PeerId& student, TierName tier) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  require_tutor(*owner, tutor_token);
  Effects fx;
  apply_relay(*owner, owner->relay.request_renegotiation(student, config_.tiers[tier]),
              fx);
  commit(*owner, fx);
}

void Coordinator::set_zoom(const SessionId& session, const std::string& tutor_token,
                           const std::optional<PeerId>& student) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  require_tutor(*owner, tutor_token);
  const auto students = owner->session.students();
  if (student && std::find(students.begin(), students.end(), *student) == students.end()) {
    throw Error(ErrorCode::ZoomTargetNotInFeeds, student->str());
  }
  if (owner->zoomed == student) return;
  owner->zoomed = student;
  Effects fx;
  Json body;
  body["event"] = "zoom";
  body["student"] = student ? Json(student->str()) : Json(nullptr);
  fx.log(LogCategory::Signal, std::string(kSessionSubject), body.dump());
  rebalance(*owner, fx);
  commit(*owner, fx);
}

// ---- messaging, telemetry, alerts -------------------------------------------------

void Coordinator::chat(const SessionId& session, const PeerId& from, const PeerId& to,
                       std::string text) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  const Member* sender = owner->session.member(from);
  if (!sender) throw Error(ErrorCode::UnknownPeer, from.str());
  if (text.empty()) throw Error(ErrorCode::EmptyText, "chat text must not be empty");

  std::vector<PeerId> recipients;
  if (sender->role == Role::Student) {
    if (to != owner->session.tutor_peer() || !owner->session.tutor_seated()) {
      throw Error(ErrorCode::RoleViolation, "students chat with the tutor only");
    }
    recipients.push_back(to);
  } else if (to == kBroadcastPeer) {
    recipients = owner->session.students();
  } else {
    const Member* target = owner->session.member(to);
    if (!target || target->role != Role::Student) {
      throw Error(ErrorCode::UnknownPeer, to.str());
    }
    recipients.push_back(to);
  }

  msg::Chat payload{from, to, std::move(text)};
  Effects fx;
  fx.log(LogCategory::Chat, from.str(), encode_payload(payload));
  const TimestampMs now = clock_->now();
  for (const auto& r : recipients) {
    if (sender->role == Role::Tutor) owner->last_contact[r] = now;
    fx.send(r, from, payload);
  }
  commit(*owner, fx);
}

std::vector<Alert> Coordinator::ingest(const SessionId& session, const PeerId& sender,
                                       TelemetryEvent event) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  if (event.student.empty()) event.student = sender;
  if (event.student != sender) {
    throw Error(ErrorCode::RoleViolation, "telemetry must describe its sender");
  }
  event.ts = clock_->now();
  std::vector<Alert> raised = owner->alerts.ingest(event);

  Effects fx;
  fx.log(LogCategory::Telemetry, sender.str(), encode_payload(msg::Telemetry{event}));
  for (const auto& a : owner->alerts.drain_cleared()) emit_alert(*owner, a, fx);
  for (const auto& a : raised) emit_alert(*owner, a, fx);
  commit(*owner, fx);
  return raised;
}

void Coordinator::tick() {
  std::vector<std::shared_ptr<Owner>> owners;
  {
    std::shared_lock lock(registry_mutex_);
    for (const auto& [id, owner] : owners_) owners.push_back(owner);
  }
  for (const auto& owner : owners) {
    std::lock_guard lock(owner->mutex);
    if (!owner->session.open()) continue;
    const TimestampMs now = clock_->now();
    Effects fx;
    for (const auto& a : owner->alerts.tick(now)) emit_alert(*owner, a, fx);
    const auto expired = owner->session.expired(now, config_.presence);
    for (const auto& peer : expired) remove_member(*owner, peer, "timeout", fx);
    if (!expired.empty()) {
      broadcast_roster(*owner, fx);
      rebalance(*owner, fx);
    }
    commit(*owner, fx);
  }
}

// ---- avatar -----------------------------------------------------------------------

AvatarCommand Coordinator::dispatch(const SessionId& session,
                                    const std::string& tutor_token, const PeerId& target,
                                    std::string text, bool show_bubble) {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  require_open(*owner);
  require_tutor(*owner, tutor_token);
  const Member* m = owner->session.member(target);
  if (!m || m->role != Role::Student) throw Error(ErrorCode::UnknownPeer, target.str());
  if (text.empty()) throw Error(ErrorCode::EmptyText, "message must not be empty");
  if (utf8_length(text) > kMaxChatChars) {
    throw Error(ErrorCode::InvalidArgument, "message exceeds 2000 characters");
  }

  const TimestampMs now = clock_->now();
  auto last = owner->last_contact.find(target);
  const bool wave = last == owner->last_contact.end() ||
                    now - last->second >= config_.attention_window_ms;
  owner->last_contact[target] = now;

  AvatarCommand cmd = compose_command(target, text, show_bubble, wave, config_.lexicon,
                                      config_.speech_rate);
  const PeerId& tutor = owner->session.tutor_peer();
  Effects fx;
  fx.log(LogCategory::AvatarCommand, target.str(), encode_payload(cmd));
  fx.log(LogCategory::Chat, tutor.str(),
         encode_payload(msg::Chat{tutor, target, std::move(text)}));
  fx.send(target, tutor, cmd);
  commit(*owner, fx);
  return cmd;
}

// ---- inspection ---------------------------------------------------------------------

std::vector<LogRecord> Coordinator::events(const SessionId& session,
                                           const std::string& tutor_token,
                                           const LogFilter& filter) const {
  auto owner = find(session);
  {
    std::lock_guard lock(owner->mutex);
    if (tutor_token != owner->session.tutor_token()) {
      throw Error(ErrorCode::InvalidToken, "events need the tutor token");
    }
  }
  return log_.query(session, filter);
}

std::vector<msg::RosterEntry> Coordinator::roster(const SessionId& session) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  return owner->session.roster(clock_->now(), config_.presence);
}

std::optional<PairingState> Coordinator::pairing_state(const SessionId& session,
                                                       const PeerId& student) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  const Pairing* p = owner->relay.pairing(student);
  return p ? std::optional(p->state) : std::nullopt;
}

std::optional<TierName> Coordinator::current_tier(const SessionId& session,
                                                  const PeerId& student) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  const Pairing* p = owner->relay.pairing(student);
  return p ? std::optional(p->current_tier) : std::nullopt;
}

StreamAllocation Coordinator::allocation(const SessionId& session) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  return owner->allocation;
}

std::size_t Coordinator::retained_signal_bytes(const SessionId& session) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  return owner->relay.retained_payload_bytes();
}

SessionState Coordinator::state(const SessionId& session) const {
  auto owner = find(session);
  std::lock_guard lock(owner->mutex);
  return owner->session.state();
}

std::vector<SessionId> Coordinator::sessions() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<SessionId> out;
  for (const auto& [id, owner] : owners_) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace tutorhub

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "tutorhub/alerts.hpp"
#include "tutorhub/avatar.hpp"
#include "tutorhub/clock.hpp"
#include "tutorhub/error.hpp"
#include "tutorhub/eventlog.hpp"
#include "tutorhub/protocol.hpp"
#include "tutorhub/quality.hpp"
#include "tutorhub/session.hpp"
#include "tutorhub/signaling.hpp"

namespace tutorhub {

struct CoordinatorConfig {
  AlertRuleConfig alerts;
  TierTable tiers;
  std::int64_t bandwidth_budget_kbps = 4000;
  PresenceThresholds presence;
  Lexicon lexicon;
  std::vector<std::string> canned_prompts = default_canned_prompts();
  double speech_rate = 1.0;
  // A student who got no avatar command or chat for this long is waved at.
  TimestampMs attention_window_ms = 30'000;
  std::vector<std::string> ice_servers;
};

// Outbound side of one live client connection. Implementations must not
// block: they are invoked while the session is locked.
class PeerSink {
 public:
  virtual ~PeerSink() = default;
  virtual void send(const PeerId& sender, msg::Payload payload) = 0;
  // Sends an Error envelope (when code is non-empty) and then closes.
  virtual void disconnect(const std::string& code, const std::string& reason) = 0;
};

struct CreatedSession {
  SessionId id;
  std::string tutor_token;
};

struct JoinResult {
  PeerId peer;
  std::string token;
  Role role = Role::Student;
  std::vector<msg::RosterEntry> roster;
  std::vector<std::string> ice_servers;
};

struct Credential {
  SessionId session;
  PeerId peer;
  Role role = Role::Student;
  std::string token;
};

struct CloseSummary {
  SessionId session;
  std::uint64_t last_seq = 0;
  bool already_closed = false;
};

// Owns every session. All mutation of one session runs under that session's
// lock (the single logical owner); different sessions proceed in parallel.
// Every effect is appended durably to the event log before it is delivered.
class Coordinator {
 public:
  Coordinator(CoordinatorConfig config, std::shared_ptr<LogStorage> storage,
              std::shared_ptr<const Clock> clock);
  ~Coordinator();

  // ---- lifecycle (HTTP surface) ----
  CreatedSession create_session(const std::string& tutor_alias);
  JoinResult join(const SessionId& session, const std::string& alias, Role role,
                  const std::optional<std::string>& token = std::nullopt,
                  bool takeover = false);
  std::vector<msg::RosterEntry> leave(const SessionId& session, const PeerId& peer,
                                      const std::string& reason = "left");
  CloseSummary close_session(const SessionId& session, const std::string& token);
  // Closes every open session; used on graceful shutdown.
  void close_all(const std::string& reason);

  // ---- presence ----
  Presence heartbeat(const SessionId& session, const PeerId& peer);
  Presence presence(const SessionId& session, const PeerId& peer) const;

  // ---- connections ----
  // Throws InvalidToken unless the token belongs to a current member.
  Credential authenticate(const std::string& token) const;
  // Sends JoinAck and a RosterUpdate; replaces any previous sink of the peer.
  void attach(const Credential& who, std::shared_ptr<PeerSink> sink);
  void detach(const Credential& who, const PeerSink* sink);
  // Routes one inbound envelope from an authenticated connection.
  void handle(const Credential& who, const Envelope& envelope);
  void record_violation(const Credential& who, ErrorCode code,
                        const std::string& reason);

  // ---- signaling & quality ----
  void relay_offer(const SessionId& session, const PeerId& from, const PeerId& to,
                   std::string sdp);
  void relay_answer(const SessionId& session, const PeerId& from, const PeerId& to,
                    std::string sdp);
  void relay_candidate(const SessionId& session, const PeerId& from,
                       const PeerId& to, std::string candidate);
  void request_renegotiation(const SessionId& session, const std::string& tutor_token,
                             const PeerId& student, TierName tier);
  // Zoom one student's feed (or none) and renegotiate every changed tier.
  void set_zoom(const SessionId& session, const std::string& tutor_token,
                const std::optional<PeerId>& student);

  // ---- messaging, telemetry, alerts ----
  void chat(const SessionId& session, const PeerId& from, const PeerId& to,
            std::string text);
  std::vector<Alert> ingest(const SessionId& session, const PeerId& sender,
                            TelemetryEvent event);
  // Runs the alert and presence rules of every open session at clock time.
  void tick();

  // ---- avatar ----
  AvatarCommand dispatch(const SessionId& session, const std::string& tutor_token,
                         const PeerId& target, std::string text, bool show_bubble);
  const std::vector<std::string>& canned_prompts() const { return config_.canned_prompts; }

  // ---- inspection ----
  std::vector<LogRecord> events(const SessionId& session, const std::string& tutor_token,
                                const LogFilter& filter = {}) const;
  std::vector<msg::RosterEntry> roster(const SessionId& session) const;
  std::optional<PairingState> pairing_state(const SessionId& session,
                                            const PeerId& student) const;
  std::optional<TierName> current_tier(const SessionId& session,
                                       const PeerId& student) const;
  StreamAllocation allocation(const SessionId& session) const;
  std::size_t retained_signal_bytes(const SessionId& session) const;
  SessionState state(const SessionId& session) const;
  std::vector<SessionId> sessions() const;

  EventLog& log() { return log_; }
  const EventLog& log() const { return log_; }
  const Clock& clock() const { return *clock_; }
  const CoordinatorConfig& config() const { return config_; }

 private:
  struct Owner;
  struct Effects;

  std::shared_ptr<Owner> find(const SessionId& session) const;
  void commit(Owner& owner, Effects& effects);
  void require_open(const Owner& owner) const;
  void require_tutor(const Owner& owner, const std::string& token) const;
  void apply_relay(Owner& owner, RelayResult result, Effects& fx);
  void rebalance(Owner& owner, Effects& fx);
  void broadcast_roster(Owner& owner, Effects& fx);
  void remove_member(Owner& owner, const PeerId& peer, const std::string& reason,
                     Effects& fx);
  void emit_alert(Owner& owner, const Alert& alert, Effects& fx);
  std::string alias_of(const Owner& owner, const PeerId& peer) const;

  CoordinatorConfig config_;
  std::shared_ptr<const Clock> clock_;
  EventLog log_;

  mutable std::shared_mutex registry_mutex_;
  std::unordered_map<SessionId, std::shared_ptr<Owner>> owners_;
  std::unordered_map<std::string, SessionId> token_index_;
};

// 128 random bits as 32 lowercase hex characters.
std::string random_token();

}  // namespace tutorhub

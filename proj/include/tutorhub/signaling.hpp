#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tutorhub/protocol.hpp"
#include "tutorhub/quality.hpp"
#include "tutorhub/types.hpp"

namespace tutorhub {

enum class PairingState { Idle, OfferPending, Connected, Renegotiating, Closed };
enum class SignalInput { Offer, Answer, Candidate, QualityRequest, Close };

std::string_view to_string(PairingState state);
std::string_view to_string(SignalInput input);

// The documented transition table; nullopt marks an illegal pair.
//   Idle          + Offer          -> OfferPending
//   OfferPending  + Answer         -> Connected
//   Connected     + QualityRequest -> Renegotiating
//   Renegotiating + Offer          -> Renegotiating (the re-offer)
//   Renegotiating + Answer         -> Connected
//   Candidate: Idle/OfferPending/Connected/Renegotiating stay put
//   any           + Close          -> Closed
std::optional<PairingState> next_state(PairingState state, SignalInput input);

// A message the relay wants delivered, attributed to its original sender.
struct Outbound {
  PeerId to;
  PeerId sender;
  msg::Payload payload;
};

struct StateChange {
  PeerId student;
  PairingState from;
  PairingState to;
  SignalInput input;
};

struct RelayResult {
  std::vector<Outbound> deliveries;
  std::vector<StateChange> changes;
};

struct Pairing {
  PeerId student;
  PeerId tutor;
  PairingState state = PairingState::Idle;
  // Candidates that arrived while Idle, flushed after the offer.
  std::deque<Outbound> pending_candidates;
  TierName current_tier = TierName::Low;
  std::optional<QualityTier> requested_tier;
};

// One pairing per student, all against the single tutor. Pure relay: holds
// no sdp or candidate text once it has been handed out for delivery. Not
// internally synchronized.
class SignalingRelay {
 public:
  void set_tutor(const std::optional<PeerId>& tutor);
  const std::optional<PeerId>& tutor() const { return tutor_; }

  void add_student(const PeerId& student);
  RelayResult remove_student(const PeerId& student);
  // Tears down every pairing (tutor left or session closed).
  RelayResult close_all();

  // Throws RoleViolation, NotPaired or IllegalTransition; state is untouched
  // on failure.
  RelayResult relay_offer(const PeerId& from, const PeerId& to, std::string sdp);
  RelayResult relay_answer(const PeerId& from, const PeerId& to, std::string sdp);
  RelayResult relay_candidate(const PeerId& from, const PeerId& to,
                              std::string candidate);
  RelayResult request_renegotiation(const PeerId& student, const QualityTier& tier);

  const Pairing* pairing(const PeerId& student) const;
  std::vector<PeerId> students() const;

  // Bytes of sdp/candidate text still held (queued pre-offer candidates).
  std::size_t retained_payload_bytes() const;

 private:
  enum class Side { Student, Tutor, Other };
  Side side_of(const PeerId& peer) const;
  Pairing& pairing_between(const PeerId& from, const PeerId& to);
  static void apply(Pairing& p, SignalInput input, RelayResult& out);

  std::optional<PeerId> tutor_;
  std::map<PeerId, Pairing> pairings_;
};

}  // namespace tutorhub

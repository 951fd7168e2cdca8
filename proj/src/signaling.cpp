#include "tutorhub/signaling.hpp"

#include <array>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

constexpr std::array<std::string_view, 5> kStateNames = {
    "Idle", "OfferPending", "Connected", "Renegotiating", "Closed"};
constexpr std::array<std::string_view, 5> kInputNames = {
    "Offer", "Answer", "Candidate", "QualityRequest", "Close"};

}  // namespace

std::string_view to_string(PairingState state) {
  return kStateNames[static_cast<std::size_t>(state)];
}

std::string_view to_string(SignalInput input) {
  return kInputNames[static_cast<std::size_t>(input)];
}

std::optional<PairingState> next_state(PairingState state, SignalInput input) {
  using S = PairingState;
  using I = SignalInput;
  if (input == I::Close) return S::Closed;
  switch (state) {
    case S::Idle:
      if (input == I::Offer) return S::OfferPending;
      if (input == I::Candidate) return S::Idle;
      break;
    case S::OfferPending:
      if (input == I::Answer) return S::Connected;
      if (input == I::Candidate) return S::OfferPending;
      break;
    case S::Connected:
      if (input == I::QualityRequest) return S::Renegotiating;
      if (input == I::Candidate) return S::Connected;
      break;
    case S::Renegotiating:
      if (input == I::Offer || input == I::Candidate) return S::Renegotiating;
      if (input == I::Answer) return S::Connected;
      break;
    case S::Closed:
      break;
  }
  return std::nullopt;
}

void SignalingRelay::set_tutor(const std::optional<PeerId>& tutor) {
  tutor_ = tutor;
  for (auto& [student, p] : pairings_) {
    Pairing fresh;
    fresh.student = student;
    fresh.tutor = tutor.value_or(PeerId{});
    fresh.state = tutor ? PairingState::Idle : PairingState::Closed;
    fresh.current_tier = p.current_tier;
    p = std::move(fresh);
  }
}

void SignalingRelay::add_student(const PeerId& student) {
  Pairing p;
  p.student = student;
  p.tutor = tutor_.value_or(PeerId{});
  p.state = tutor_ ? PairingState::Idle : PairingState::Closed;
  pairings_[student] = std::move(p);
}

RelayResult SignalingRelay::remove_student(const PeerId& student) {
  RelayResult out;
  auto it = pairings_.find(student);
  if (it == pairings_.end()) return out;
  apply(it->second, SignalInput::Close, out);
  pairings_.erase(it);
  return out;
}

RelayResult SignalingRelay::close_all() {
  RelayResult out;
  for (auto& [student, p] : pairings_) apply(p, SignalInput::Close, out);
  return out;
}

SignalingRelay::Side SignalingRelay::side_of(const PeerId& peer) const {
  if (tutor_ && peer == *tutor_) return Side::Tutor;
  if (pairings_.contains(peer)) return Side::Student;
  return Side::Other;
}

Pairing& SignalingRelay::pairing_between(const PeerId& from, const PeerId& to) {
  const Side a = side_of(from);
  const Side b = side_of(to);
  if (a == Side::Other || b == Side::Other) {
    throw Error(ErrorCode::NotPaired, from.str() + " -> " + to.str());
  }
  if (a == b) {
    throw Error(ErrorCode::RoleViolation,
                "signaling only runs between a student and the tutor");
  }
  Pairing& p = pairings_.at(a == Side::Student ? from : to);
  if (p.state == PairingState::Closed) {
    throw Error(ErrorCode::NotPaired, "pairing of " + p.student.str() + " is closed");
  }
  return p;
}

void SignalingRelay::apply(Pairing& p, SignalInput input, RelayResult& out) {
  const auto next = next_state(p.state, input);
  if (!next) {
    throw Error(ErrorCode::IllegalTransition,
                std::string(to_string(input)) + " in state " +
                    std::string(to_string(p.state)));
  }
  if (*next == PairingState::Closed) p.pending_candidates.clear();
  if (*next != p.state) {
    out.changes.push_back({p.student, p.state, *next, input});
    p.state = *next;
  }
}

RelayResult SignalingRelay::relay_offer(const PeerId& from, const PeerId& to,
                                        std::string sdp) {
  Pairing& p = pairing_between(from, to);
  if (from != p.student) {
    throw Error(ErrorCode::RoleViolation, "only students send offers");
  }
  const bool flush = p.state == PairingState::Idle;
  RelayResult out;
  apply(p, SignalInput::Offer, out);
  out.deliveries.push_back({to, from, msg::Offer{to, std::move(sdp)}});
  if (flush) {
    while (!p.pending_candidates.empty()) {
      out.deliveries.push_back(std::move(p.pending_candidates.front()));
      p.pending_candidates.pop_front();
    }
  }
  return out;
}

RelayResult SignalingRelay::relay_answer(const PeerId& from, const PeerId& to,
                                         std::string sdp) {
  Pairing& p = pairing_between(from, to);
  if (from != p.tutor) {
    throw Error(ErrorCode::RoleViolation, "only the tutor answers");
  }
  const bool renegotiating = p.state == PairingState::Renegotiating;
  RelayResult out;
  apply(p, SignalInput::Answer, out);
  if (renegotiating && p.requested_tier) {
    p.current_tier = p.requested_tier->name;
    p.requested_tier.reset();
  }
  out.deliveries.push_back({to, from, msg::Answer{to, std::move(sdp)}});
  return out;
}

RelayResult SignalingRelay::relay_candidate(const PeerId& from, const PeerId& to,
                                            std::string candidate) {
  Pairing& p = pairing_between(from, to);
  RelayResult out;
  apply(p, SignalInput::Candidate, out);
  Outbound delivery{to, from, msg::IceCandidate{to, std::move(candidate)}};
  if (p.state == PairingState::Idle) {
    p.pending_candidates.push_back(std::move(delivery));
  } else {
    out.deliveries.push_back(std::move(delivery));
  }
  return out;
}

RelayResult SignalingRelay::request_renegotiation(const PeerId& student,
                                                  const QualityTier& tier) {
  auto it = pairings_.find(student);
  if (it == pairings_.end() || !tutor_) {
    throw Error(ErrorCode::NotPaired, student.str());
  }
  Pairing& p = it->second;
  if (p.state == PairingState::Closed) {
    throw Error(ErrorCode::NotPaired, "pairing of " + student.str() + " is closed");
  }
  RelayResult out;
  apply(p, SignalInput::QualityRequest, out);
  p.requested_tier = tier;
  out.deliveries.push_back({student, *tutor_, msg::QualityRequest{student, tier}});
  return out;
}

const Pairing* SignalingRelay::pairing(const PeerId& student) const {
  auto it = pairings_.find(student);
  return it == pairings_.end() ? nullptr : &it->second;
}

std::vector<PeerId> SignalingRelay::students() const {
  std::vector<PeerId> out;
  for (const auto& [student, p] : pairings_) out.push_back(student);
  return out;
}

std::size_t SignalingRelay::retained_payload_bytes() const {
  std::size_t bytes = 0;
  for (const auto& [student, p] : pairings_) {
    for (const auto& c : p.pending_candidates) {
      if (auto* ice = std::get_if<msg::IceCandidate>(&c.payload)) {
        bytes += ice->candidate.size();
      }
    }
  }
  return bytes;
}

}  // namespace tutorhub

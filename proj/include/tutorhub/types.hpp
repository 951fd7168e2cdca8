#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>

namespace tutorhub {

using TimestampMs = std::int64_t;

// Opaque string identifier, distinct per Tag so peer and session ids cannot
// be mixed up.
template <class Tag>
class Id {
 public:
  Id() = default;
  explicit Id(std::string value) : value_(std::move(value)) {}

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }

  friend auto operator<=>(const Id&, const Id&) = default;
  friend bool operator==(const Id&, const Id&) = default;
  friend std::ostream& operator<<(std::ostream& os, const Id& id) {
    return os << id.value_;
  }

 private:
  std::string value_;
};

using PeerId = Id<struct PeerTag>;
using SessionId = Id<struct SessionTag>;

// Envelopes originated by the gateway itself carry this sender.
inline const PeerId kServerPeer{"server"};
// Chat addressed to every student in the session.
inline const PeerId kBroadcastPeer{"*"};

enum class Role { Tutor, Student };

enum class PresenceStatus { Connected, Stale, Disconnected };

std::string_view to_string(Role role);
std::string_view to_string(PresenceStatus status);

}  // namespace tutorhub

template <class Tag>
struct std::hash<tutorhub::Id<Tag>> {
  std::size_t operator()(const tutorhub::Id<Tag>& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};

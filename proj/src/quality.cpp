#include "tutorhub/quality.hpp"

#include <algorithm>
#include <array>
#include <unordered_set>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

constexpr std::array<std::string_view, 4> kTierNames = {"Frozen", "Low", "Mid",
                                                        "High"};

}  // namespace

std::string_view to_string(TierName name) {
  return kTierNames[static_cast<std::size_t>(name)];
}

std::optional<TierName> parse_tier_name(std::string_view text) {
  for (std::size_t i = 0; i < kTierNames.size(); ++i) {
    if (kTierNames[i] == text) return static_cast<TierName>(i);
  }
  return std::nullopt;
}

const QualityTier& TierTable::operator[](TierName name) const {
  switch (name) {
    case TierName::High:
      return high;
    case TierName::Mid:
      return mid;
    case TierName::Low:
      return low;
    case TierName::Frozen:
      break;
  }
  return frozen;
}

void TierTable::validate() const {
  if (high.name != TierName::High || mid.name != TierName::Mid ||
      low.name != TierName::Low || frozen.name != TierName::Frozen) {
    throw Error(ErrorCode::ConfigInvalid, "tier table names out of place");
  }
  if (!(high.kbps > mid.kbps && mid.kbps > low.kbps && low.kbps > frozen.kbps &&
        frozen.kbps >= 0)) {
    throw Error(ErrorCode::ConfigInvalid,
                "tier bitrates must strictly decrease High > Mid > Low > Frozen");
  }
  if (frozen.frame_interval_ms <= 0) {
    throw Error(ErrorCode::ConfigInvalid,
                "frozen tier needs a positive snapshot interval");
  }
  for (const QualityTier* t : {&high, &mid, &low, &frozen}) {
    if (t->width <= 0 || t->height <= 0) {
      throw Error(ErrorCode::ConfigInvalid, "tier dimensions must be positive");
    }
  }
}

std::optional<TierName> StreamAllocation::tier_of(const PeerId& peer) const {
  for (const auto& a : assignments) {
    if (a.peer == peer) return a.tier;
  }
  return std::nullopt;
}

StreamAllocation allocate(std::span<const PeerId> feeds,
                          const std::optional<PeerId>& zoomed,
                          std::int64_t budget_kbps, const TierTable& tiers) {
  if (budget_kbps < 0) {
    throw Error(ErrorCode::InvalidArgument, "budget must be non-negative");
  }
  std::unordered_set<PeerId> seen;
  for (const auto& feed : feeds) {
    if (!seen.insert(feed).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate feed " + feed.str());
    }
  }
  if (zoomed && !seen.contains(*zoomed)) {
    throw Error(ErrorCode::ZoomTargetNotInFeeds, zoomed->str());
  }

  StreamAllocation out;
  out.assignments.reserve(feeds.size());
  for (const auto& feed : feeds) {
    const bool is_zoomed = zoomed && feed == *zoomed;
    out.assignments.push_back({feed, is_zoomed ? TierName::High : TierName::Low});
  }

  auto total = [&] {
    std::int64_t sum = 0;
    for (const auto& a : out.assignments) sum += tiers[a.tier].kbps;
    return sum;
  };

  std::int64_t sum = total();
  if (sum > budget_kbps && zoomed) {
    for (auto& a : out.assignments) {
      if (a.peer == *zoomed) a.tier = TierName::Mid;
    }
    sum = total();
  }

  if (sum > budget_kbps) {
    std::vector<Assignment*> order;
    for (auto& a : out.assignments) {
      if (!zoomed || a.peer != *zoomed) order.push_back(&a);
    }
    std::sort(order.begin(), order.end(),
              [](const Assignment* x, const Assignment* y) {
                return x->peer < y->peer;
              });
    for (Assignment* a : order) {
      if (sum <= budget_kbps) break;
      sum -= tiers[a->tier].kbps;
      a->tier = TierName::Frozen;
      sum += tiers[a->tier].kbps;
    }
  }

  out.total_kbps = sum;
  out.over_budget = sum > budget_kbps;
  return out;
}

}  // namespace tutorhub

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tutorhub/types.hpp"

namespace tutorhub {

// Declared lowest to highest so that the enumerator order is the tier order.
enum class TierName { Frozen, Low, Mid, High };

std::string_view to_string(TierName name);
std::optional<TierName> parse_tier_name(std::string_view text);

struct QualityTier {
  TierName name = TierName::Low;
  int width = 0;
  int height = 0;
  int kbps = 0;
  int frame_interval_ms = 0;  // non-zero only for Frozen

  friend bool operator==(const QualityTier&, const QualityTier&) = default;
};

struct TierTable {
  QualityTier high{TierName::High, 1280, 720, 1500, 0};
  QualityTier mid{TierName::Mid, 640, 360, 400, 0};
  QualityTier low{TierName::Low, 320, 180, 150, 0};
  QualityTier frozen{TierName::Frozen, 320, 180, 10, 5000};

  const QualityTier& operator[](TierName name) const;

  // Throws ConfigInvalid unless bitrates strictly decrease High > Mid > Low >
  // Frozen >= 0 and Frozen has a positive snapshot interval.
  void validate() const;

  friend bool operator==(const TierTable&, const TierTable&) = default;
};

struct Assignment {
  PeerId peer;
  TierName tier;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct StreamAllocation {
  std::vector<Assignment> assignments;  // same order as the input feeds
  std::int64_t total_kbps = 0;
  bool over_budget = false;

  std::optional<TierName> tier_of(const PeerId& peer) const;

  friend bool operator==(const StreamAllocation&,
                         const StreamAllocation&) = default;
};

// Deterministic tier allocation:
//   1. zoomed feed High, everyone else Low;
//   2. over budget: zoomed drops to Mid;
//   3. still over: non-zoomed feeds drop to Frozen in ascending PeerId order
//      until the total fits;
//   4. still over with everything at its floor: return that with over_budget.
// Throws ZoomTargetNotInFeeds, or InvalidArgument for a negative budget or
// duplicate feeds.
StreamAllocation allocate(std::span<const PeerId> feeds,
                          const std::optional<PeerId>& zoomed,
                          std::int64_t budget_kbps,
                          const TierTable& tiers = TierTable{});

}  // namespace tutorhub

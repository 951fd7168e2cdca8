#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "tutorhub/coordinator.hpp"

namespace tutorhub {

struct GatewayConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;  // 0 picks an ephemeral port
  std::filesystem::path data_dir = "data";
  CoordinatorConfig coordinator;
  std::size_t outbound_queue_limit = 1000;
  int threads = 2;
  // Test-only: time stands still until POST /api/test/clock advances it.
  bool simulated_clock = false;

  // Throws ConfigInvalid.
  void validate() const;
};

// Applies one `key = value` setting. Throws ConfigInvalid on an unknown key
// or an unparsable value. Relative lexicon paths resolve against base_dir.
void apply_setting(GatewayConfig& config, std::string_view key, std::string_view value,
                   const std::filesystem::path& base_dir = {});

// Reads a config file of `key = value` lines; `#` starts a comment.
void load_config_file(GatewayConfig& config, const std::filesystem::path& path);

// Reads greeting/encouragement/corrective/prompt lines. A category present in
// the file replaces the built-in list for that category.
void load_lexicon_file(CoordinatorConfig& config, const std::filesystem::path& path);

// "1280x720@1500", plus "/5000" for a snapshot interval.
QualityTier parse_tier_spec(TierName name, std::string_view spec);

}  // namespace tutorhub

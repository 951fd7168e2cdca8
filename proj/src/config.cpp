#include "tutorhub/config.hpp"

#include <charconv>
#include <fstream>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

[[noreturn]] void bad(std::string_view key, std::string_view why) {
  throw Error(ErrorCode::ConfigInvalid, std::string(key) + ": " + std::string(why));
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T number(std::string_view key, std::string_view text) {
  T value{};
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) bad(key, "not a number");
  return value;
}

double real(std::string_view key, std::string_view text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(text), &used);
    if (used != text.size()) bad(key, "not a number");
    return v;
  } catch (const std::logic_error&) {
    bad(key, "not a number");
  }
}

bool boolean(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  bad(key, "expected true or false");
}

template <class Fn>
void for_each_setting(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot read " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ConfigInvalid,
                  path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    fn(trim(view.substr(0, eq)), trim(view.substr(eq + 1)));
  }
}

}  // namespace

QualityTier parse_tier_spec(TierName name, std::string_view spec) {
  const std::string key = "tier." + std::string(to_string(name));
  QualityTier t{name, 0, 0, 0, 0};
  const auto x = spec.find('x');
  const auto at = spec.find('@');
  if (x == std::string_view::npos || at == std::string_view::npos || at < x) {
    bad(key, "expected WIDTHxHEIGHT@KBPS");
  }
  auto rest = spec.substr(at + 1);
  const auto slash = rest.find('/');
  t.width = number<int>(key, spec.substr(0, x));
  t.height = number<int>(key, spec.substr(x + 1, at - x - 1));
  t.kbps = number<int>(key, rest.substr(0, slash));
  if (slash != std::string_view::npos) {
    t.frame_interval_ms = number<int>(key, rest.substr(slash + 1));
  }
  return t;
}

void apply_setting(GatewayConfig& c, std::string_view key, std::string_view value,
                   const std::filesystem::path& base_dir) {
  auto& co = c.coordinator;
  if (key == "bind") {
    c.bind = value;
  } else if (key == "port") {
    c.port = number<int>(key, value);
  } else if (key == "data_dir") {
    c.data_dir = std::filesystem::path(value);
  } else if (key == "inactivity_secs") {
    co.alerts.inactivity_secs = number<std::int64_t>(key, value);
  } else if (key == "incorrect_threshold") {
    co.alerts.incorrect_threshold = number<int>(key, value);
  } else if (key == "incorrect_window_secs") {
    co.alerts.incorrect_window_secs = number<std::int64_t>(key, value);
  } else if (key == "bandwidth_budget_kbps") {
    co.bandwidth_budget_kbps = number<std::int64_t>(key, value);
  } else if (key == "heartbeat_secs") {
    co.presence.interval_ms = number<std::int64_t>(key, value) * 1000;
  } else if (key == "stale_secs") {
    co.presence.stale_ms = number<std::int64_t>(key, value) * 1000;
  } else if (key == "disconnect_secs") {
    co.presence.disconnect_ms = number<std::int64_t>(key, value) * 1000;
  } else if (key == "attention_window_secs") {
    co.attention_window_ms = number<std::int64_t>(key, value) * 1000;
  } else if (key == "ice_server") {
    co.ice_servers.emplace_back(value);
  } else if (key == "tier.high") {
    co.tiers.high = parse_tier_spec(TierName::High, value);
  } else if (key == "tier.mid") {
    co.tiers.mid = parse_tier_spec(TierName::Mid, value);
  } else if (key == "tier.low") {
    co.tiers.low = parse_tier_spec(TierName::Low, value);
  } else if (key == "tier.frozen") {
    co.tiers.frozen = parse_tier_spec(TierName::Frozen, value);
  } else if (key == "speech_rate") {
    co.speech_rate = real(key, value);
  } else if (key == "lexicon_file") {
    std::filesystem::path p(value);
    load_lexicon_file(co, p.is_relative() ? base_dir / p : p);
  } else if (key == "outbound_queue_limit") {
    c.outbound_queue_limit = number<std::size_t>(key, value);
  } else if (key == "threads") {
    c.threads = number<int>(key, value);
  } else if (key == "simulated_clock") {
    c.simulated_clock = boolean(key, value);
  } else {
    bad(key, "unknown setting");
  }
}

void load_config_file(GatewayConfig& config, const std::filesystem::path& path) {
  const auto base = path.parent_path();
  for_each_setting(path, [&](std::string_view key, std::string_view value) {
    apply_setting(config, key, value, base);
  });
}

void load_lexicon_file(CoordinatorConfig& config, const std::filesystem::path& path) {
  Lexicon lexicon;
  std::vector<std::string> prompts;
  bool seen[3] = {false, false, false};
  std::vector<std::string>* lists[3] = {&lexicon.greeting, &lexicon.encouragement,
                                        &lexicon.corrective};
  for_each_setting(path, [&](std::string_view key, std::string_view value) {
    int slot = -1;
    if (key == "greeting") slot = 0;
    else if (key == "encouragement") slot = 1;
    else if (key == "corrective") slot = 2;
    else if (key == "prompt") {
      prompts.emplace_back(value);
      return;
    } else {
      bad(key, "unknown lexicon category");
    }
    if (!seen[slot]) lists[slot]->clear();
    seen[slot] = true;
    lists[slot]->emplace_back(value);
  });
  config.lexicon = std::move(lexicon);
  if (!prompts.empty()) config.canned_prompts = std::move(prompts);
}

void GatewayConfig::validate() const {
  if (port < 0 || port > 65535) {
    throw Error(ErrorCode::ConfigInvalid, "port must be in 0..65535");
  }
  if (bind.empty()) throw Error(ErrorCode::ConfigInvalid, "bind address must not be empty");
  if (outbound_queue_limit == 0) {
    throw Error(ErrorCode::ConfigInvalid, "outbound_queue_limit must be positive");
  }
  if (threads < 1) throw Error(ErrorCode::ConfigInvalid, "threads must be positive");
  coordinator.alerts.validate();
  coordinator.tiers.validate();
  coordinator.presence.validate();
  if (coordinator.bandwidth_budget_kbps < 0) {
    throw Error(ErrorCode::ConfigInvalid, "bandwidth_budget_kbps must be non-negative");
  }
  if (!(coordinator.speech_rate > 0)) {
    throw Error(ErrorCode::ConfigInvalid, "speech_rate must be positive");
  }
  if (coordinator.attention_window_ms <= 0) {
    throw Error(ErrorCode::ConfigInvalid, "attention_window_secs must be positive");
  }
}

}  // namespace tutorhub

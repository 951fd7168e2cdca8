#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tutorhub/types.hpp"

namespace tutorhub {

enum class TelemetryKind { MouseClick, KeyInput, AnswerSubmitted, Heartbeat };

std::string_view to_string(TelemetryKind kind);
std::optional<TelemetryKind> parse_telemetry_kind(std::string_view text);

struct TelemetryEvent {
  PeerId student;
  TelemetryKind kind = TelemetryKind::Heartbeat;
  bool correct = false;  // meaningful for AnswerSubmitted only
  TimestampMs ts = 0;

  friend bool operator==(const TelemetryEvent&, const TelemetryEvent&) = default;
};

enum class AlertKind { Inactivity, RepeatedIncorrect };

std::string_view to_string(AlertKind kind);
std::optional<AlertKind> parse_alert_kind(std::string_view text);

struct Alert {
  PeerId student;
  AlertKind kind = AlertKind::Inactivity;
  std::int64_t duration_secs = 0;  // Inactivity
  int count = 0;                   // RepeatedIncorrect
  std::int64_t window_secs = 0;    // RepeatedIncorrect
  TimestampMs raised_at = 0;
  std::optional<TimestampMs> cleared_at;

  friend bool operator==(const Alert&, const Alert&) = default;
};

struct AlertRuleConfig {
  std::int64_t inactivity_secs = 120;
  int incorrect_threshold = 3;
  std::int64_t incorrect_window_secs = 300;

  // Throws ConfigInvalid unless every field is strictly positive.
  void validate() const;
};

// Per-session rule engine. Not internally synchronized: the owning session
// serializes ingest() and tick().
class AlertEngine {
 public:
  explicit AlertEngine(AlertRuleConfig config = {});

  // Registers a student; join time counts as the first activity.
  void add_student(const PeerId& student, TimestampMs joined_at);
  void remove_student(const PeerId& student);
  bool has_student(const PeerId& student) const;

  // Returns alerts raised by this event. Throws UnknownStudent.
  std::vector<Alert> ingest(const TelemetryEvent& event);

  // Raises Inactivity for every idle student without an open one.
  std::vector<Alert> tick(TimestampMs now);

  // Alerts cleared since the last call, with cleared_at set.
  std::vector<Alert> drain_cleared();

  std::vector<Alert> open_alerts() const;
  const AlertRuleConfig& config() const { return config_; }

 private:
  struct StudentState {
    TimestampMs last_seen = 0;
    TimestampMs last_activity = 0;
    std::deque<TimestampMs> incorrect;
    std::optional<Alert> inactivity;
    std::optional<Alert> repeated_incorrect;
  };

  void clear(std::optional<Alert>& slot, TimestampMs at);

  AlertRuleConfig config_;
  std::map<PeerId, StudentState> students_;  // ordered: deterministic ticks
  std::vector<Alert> cleared_;
};

// "Student X was inactive for 2 minutes". Durations divisible by 60 render in
// minutes, anything else in seconds.
std::string render_alert(const Alert& alert, std::string_view alias);

}  // namespace tutorhub

#include "tutorhub/alerts.hpp"

#include <algorithm>
#include <array>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

constexpr std::array<std::string_view, 4> kTelemetryNames = {
    "MouseClick", "KeyInput", "AnswerSubmitted", "Heartbeat"};
constexpr std::array<std::string_view, 2> kAlertNames = {"Inactivity",
                                                         "RepeatedIncorrect"};

constexpr TimestampMs kMsPerSec = 1000;

std::string plural(std::int64_t n, std::string_view unit) {
  std::string out = std::to_string(n) + " " + std::string(unit);
  if (n != 1) out += "s";
  return out;
}

std::string span_text(std::int64_t secs) {
  if (secs != 0 && secs % 60 == 0) return plural(secs / 60, "minute");
  return plural(secs, "second");
}

}  // namespace

std::string_view to_string(TelemetryKind kind) {
  return kTelemetryNames[static_cast<std::size_t>(kind)];
}

std::optional<TelemetryKind> parse_telemetry_kind(std::string_view text) {
  for (std::size_t i = 0; i < kTelemetryNames.size(); ++i) {
    if (kTelemetryNames[i] == text) return static_cast<TelemetryKind>(i);
  }
  return std::nullopt;
}

std::string_view to_string(AlertKind kind) {
  return kAlertNames[static_cast<std::size_t>(kind)];
}

std::optional<AlertKind> parse_alert_kind(std::string_view text) {
  for (std::size_t i = 0; i < kAlertNames.size(); ++i) {
    if (kAlertNames[i] == text) return static_cast<AlertKind>(i);
  }
  return std::nullopt;
}

void AlertRuleConfig::validate() const {
  if (inactivity_secs <= 0 || incorrect_threshold <= 0 ||
      incorrect_window_secs <= 0) {
    throw Error(ErrorCode::ConfigInvalid, "alert thresholds must be positive");
  }
}

AlertEngine::AlertEngine(AlertRuleConfig config) : config_(config) {
  config_.validate();
}

void AlertEngine::add_student(const PeerId& student, TimestampMs joined_at) {
  StudentState state;
  state.last_seen = joined_at;
  state.last_activity = joined_at;
  students_[student] = std::move(state);
}

void AlertEngine::remove_student(const PeerId& student) {
  students_.erase(student);
}

bool AlertEngine::has_student(const PeerId& student) const {
  return students_.contains(student);
}

void AlertEngine::clear(std::optional<Alert>& slot, TimestampMs at) {
  if (!slot) return;
  slot->cleared_at = at;
  cleared_.push_back(*slot);
  slot.reset();
}

std::vector<Alert> AlertEngine::ingest(const TelemetryEvent& event) {
  auto it = students_.find(event.student);
  if (it == students_.end()) {
    throw Error(ErrorCode::UnknownStudent, event.student.str());
  }
  StudentState& s = it->second;
  const TimestampMs ts = std::max(event.ts, s.last_seen);
  s.last_seen = ts;

  std::vector<Alert> raised;
  if (event.kind == TelemetryKind::Heartbeat) return raised;

  s.last_activity = ts;
  clear(s.inactivity, ts);

  if (event.kind != TelemetryKind::AnswerSubmitted) return raised;

  if (event.correct) {
    s.incorrect.clear();
    clear(s.repeated_incorrect, ts);
    return raised;
  }

  s.incorrect.push_back(ts);
  const TimestampMs window_ms = config_.incorrect_window_secs * kMsPerSec;
  while (!s.incorrect.empty() && ts - s.incorrect.front() > window_ms) {
    s.incorrect.pop_front();
  }
  if (!s.repeated_incorrect &&
      s.incorrect.size() >= static_cast<std::size_t>(config_.incorrect_threshold)) {
    Alert alert;
    alert.student = event.student;
    alert.kind = AlertKind::RepeatedIncorrect;
    alert.count = static_cast<int>(s.incorrect.size());
    alert.window_secs = config_.incorrect_window_secs;
    alert.raised_at = ts;
    s.repeated_incorrect = alert;
    raised.push_back(alert);
  }
  return raised;
}

std::vector<Alert> AlertEngine::tick(TimestampMs now) {
  std::vector<Alert> raised;
  const TimestampMs threshold_ms = config_.inactivity_secs * kMsPerSec;
  for (auto& [student, s] : students_) {
    if (s.inactivity) continue;
    const TimestampMs idle = now - s.last_activity;
    if (idle < threshold_ms) continue;
    Alert alert;
    alert.student = student;
    alert.kind = AlertKind::Inactivity;
    alert.duration_secs = idle / kMsPerSec;
    alert.raised_at = now;
    s.inactivity = alert;
    raised.push_back(alert);
  }
  return raised;
}

std::vector<Alert> AlertEngine::drain_cleared() {
  return std::exchange(cleared_, {});
}

std::vector<Alert> AlertEngine::open_alerts() const {
  std::vector<Alert> out;
  for (const auto& [student, s] : students_) {
    if (s.inactivity) out.push_back(*s.inactivity);
    if (s.repeated_incorrect) out.push_back(*s.repeated_incorrect);
  }
  return out;
}

std::string render_alert(const Alert& alert, std::string_view alias) {
  std::string out(alias);
  switch (alert.kind) {
    case AlertKind::Inactivity:
      out += " was inactive for " + span_text(alert.duration_secs);
      break;
    case AlertKind::RepeatedIncorrect:
      out += " submitted " + plural(alert.count, "incorrect answer") +
             " in the last " + span_text(alert.window_secs);
      break;
  }
  return out;
}

}  // namespace tutorhub

#include "oracles.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tutorhub/avatar.hpp"
#include "tutorhub/clock.hpp"
#include "tutorhub/error.hpp"

namespace tutorhub::testing {

namespace {

template <class T>
T uniform(Rng& rng, T lo, T hi) {
  return std::uniform_int_distribution<T>(lo, hi)(rng);
}

bool chance(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

}  // namespace

// ---- quality ------------------------------------------------------------------

StreamAllocation brute_force_allocate(std::span<const PeerId> feeds,
                                      const std::optional<PeerId>& zoomed,
                                      std::int64_t budget_kbps, const TierTable& tiers) {
  std::vector<std::size_t> others;
  std::optional<std::size_t> zoom_index;
  for (std::size_t i = 0; i < feeds.size(); ++i) {
    if (zoomed && feeds[i] == *zoomed) {
      zoom_index = i;
    } else {
      others.push_back(i);
    }
  }

  struct Candidate {
    std::vector<TierName> tiers;
    std::int64_t total = 0;
    std::size_t frozen = 0;
    TierName zoom = TierName::Low;
    std::vector<PeerId> frozen_ids;
  };

  auto build = [&](TierName zoom_tier, std::uint64_t mask) {
    Candidate c;
    c.tiers.assign(feeds.size(), TierName::Low);
    c.zoom = zoom_tier;
    if (zoom_index) c.tiers[*zoom_index] = zoom_tier;
    for (std::size_t k = 0; k < others.size(); ++k) {
      if (mask & (std::uint64_t{1} << k)) {
        c.tiers[others[k]] = TierName::Frozen;
        c.frozen_ids.push_back(feeds[others[k]]);
      }
    }
    std::sort(c.frozen_ids.begin(), c.frozen_ids.end());
    c.frozen = c.frozen_ids.size();
    for (auto t : c.tiers) c.total += tiers[t].kbps;
    return c;
  };

  std::optional<Candidate> best;
  const std::vector<TierName> zoom_options =
      zoom_index ? std::vector<TierName>{TierName::High, TierName::Mid}
                 : std::vector<TierName>{TierName::Low};
  const std::uint64_t masks = std::uint64_t{1} << others.size();
  for (auto zoom_tier : zoom_options) {
    for (std::uint64_t mask = 0; mask < masks; ++mask) {
      if (zoom_tier == TierName::High && mask != 0) continue;
      Candidate c = build(zoom_tier, mask);
      if (c.total > budget_kbps) continue;
      const bool better =
          !best || c.frozen < best->frozen ||
          (c.frozen == best->frozen &&
           (c.zoom > best->zoom ||
            (c.zoom == best->zoom && c.frozen_ids < best->frozen_ids)));
      if (better) best = std::move(c);
    }
  }

  const bool fits = best.has_value();
  if (!fits) {
    best = build(zoom_index ? TierName::Mid : TierName::Low, masks - 1);
  }

  StreamAllocation out;
  for (std::size_t i = 0; i < feeds.size(); ++i) {
    out.assignments.push_back({feeds[i], best->tiers[i]});
  }
  out.total_kbps = best->total;
  out.over_budget = !fits;
  return out;
}

TierTable random_tier_table(Rng& rng) {
  TierTable t;
  t.frozen.kbps = uniform(rng, 0, 50);
  t.frozen.frame_interval_ms = uniform(rng, 1, 10'000);
  t.low.kbps = t.frozen.kbps + uniform(rng, 1, 300);
  t.mid.kbps = t.low.kbps + uniform(rng, 1, 800);
  t.high.kbps = t.mid.kbps + uniform(rng, 1, 2000);
  return t;
}

std::vector<PeerId> random_feeds(Rng& rng, std::size_t count) {
  std::vector<int> numbers(100);
  for (int i = 0; i < 100; ++i) numbers[i] = i;
  std::shuffle(numbers.begin(), numbers.end(), rng);
  std::vector<PeerId> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.emplace_back("s" + std::to_string(numbers[i]));
  }
  return out;
}

// ---- alerts -------------------------------------------------------------------

std::vector<StepOutput> rescan_oracle(const std::vector<AlertStep>& steps,
                                      const AlertRuleConfig& config) {
  using Type = AlertStep::Type;
  const TimestampMs inactivity_ms = config.inactivity_secs * 1000;
  const TimestampMs window_ms = config.incorrect_window_secs * 1000;

  auto of = [&](std::size_t k, const PeerId& s) {
    return steps[k].type != Type::Tick && steps[k].student == s;
  };
  auto is_activity = [&](std::size_t k) {
    return steps[k].type == Type::Join ||
           (steps[k].type == Type::Event && steps[k].kind != TelemetryKind::Heartbeat);
  };
  auto is_answer = [&](std::size_t k, bool correct) {
    return steps[k].type == Type::Event &&
           steps[k].kind == TelemetryKind::AnswerSubmitted && steps[k].correct == correct;
  };
  // Running max of the student's raw timestamps up to and including step k.
  auto effective = [&](std::size_t k) {
    const PeerId& s = steps[k].student;
    TimestampMs m = steps[k].ts;
    for (std::size_t i = 0; i <= k; ++i) {
      if (of(i, s)) m = std::max(m, steps[i].ts);
    }
    return m;
  };
  auto join_index = [&](const PeerId& s) {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i].type == Type::Join && steps[i].student == s) return i;
    }
    return steps.size();
  };
  auto last_activity = [&](const PeerId& s, std::size_t before) {
    for (std::size_t k = before; k-- > 0;) {
      if (of(k, s) && is_activity(k)) return k;
    }
    return join_index(s);
  };
  auto last_correct = [&](const PeerId& s, std::size_t before) {
    for (std::size_t k = before; k-- > 0;) {
      if (of(k, s) && (is_answer(k, true) || steps[k].type == Type::Join)) return k;
    }
    return join_index(s);
  };
  auto open_inactivity = [&](const PeerId& s, std::size_t before) -> std::optional<Alert> {
    const std::size_t la = last_activity(s, before);
    const TimestampMs since = effective(la);
    for (std::size_t t = la + 1; t < before; ++t) {
      if (steps[t].type == Type::Tick && steps[t].ts - since >= inactivity_ms) {
        Alert a;
        a.student = s;
        a.kind = AlertKind::Inactivity;
        a.duration_secs = (steps[t].ts - since) / 1000;
        a.raised_at = steps[t].ts;
        return a;
      }
    }
    return std::nullopt;
  };
  auto window_count = [&](std::size_t i) {
    const PeerId& s = steps[i].student;
    const TimestampMs at = effective(i);
    int n = 0;
    for (std::size_t k = last_correct(s, i) + 1; k <= i; ++k) {
      if (of(k, s) && is_answer(k, false) && at - effective(k) <= window_ms) ++n;
    }
    return n;
  };
  auto open_repeated = [&](const PeerId& s, std::size_t before) -> std::optional<Alert> {
    for (std::size_t i = last_correct(s, before) + 1; i < before; ++i) {
      if (!of(i, s) || !is_answer(i, false)) continue;
      const int n = window_count(i);
      if (n >= config.incorrect_threshold) {
        Alert a;
        a.student = s;
        a.kind = AlertKind::RepeatedIncorrect;
        a.count = n;
        a.window_secs = config.incorrect_window_secs;
        a.raised_at = effective(i);
        return a;
      }
    }
    return std::nullopt;
  };

  std::vector<StepOutput> out(steps.size());
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const AlertStep& step = steps[j];
    StepOutput& o = out[j];
    switch (step.type) {
      case Type::Join:
        break;
      case Type::Event: {
        if (step.kind == TelemetryKind::Heartbeat) break;
        const TimestampMs at = effective(j);
        if (auto a = open_inactivity(step.student, j)) {
          a->cleared_at = at;
          o.cleared.push_back(*a);
        }
        if (is_answer(j, true)) {
          if (auto a = open_repeated(step.student, j)) {
            a->cleared_at = at;
            o.cleared.push_back(*a);
          }
        } else if (is_answer(j, false) && !open_repeated(step.student, j)) {
          const int n = window_count(j);
          if (n >= config.incorrect_threshold) {
            Alert a;
            a.student = step.student;
            a.kind = AlertKind::RepeatedIncorrect;
            a.count = n;
            a.window_secs = config.incorrect_window_secs;
            a.raised_at = at;
            o.raised.push_back(a);
          }
        }
        break;
      }
      case Type::Tick: {
        std::vector<PeerId> joined;
        for (std::size_t i = 0; i < j; ++i) {
          if (steps[i].type == Type::Join) joined.push_back(steps[i].student);
        }
        std::sort(joined.begin(), joined.end());
        for (const auto& s : joined) {
          if (open_inactivity(s, j)) continue;
          const TimestampMs idle = step.ts - effective(last_activity(s, j));
          if (idle < inactivity_ms) continue;
          Alert a;
          a.student = s;
          a.kind = AlertKind::Inactivity;
          a.duration_secs = idle / 1000;
          a.raised_at = step.ts;
          o.raised.push_back(a);
        }
        break;
      }
    }
  }
  return out;
}

std::vector<StepOutput> replay_engine(const std::vector<AlertStep>& steps,
                                      const AlertRuleConfig& config) {
  AlertEngine engine(config);
  std::vector<StepOutput> out;
  out.reserve(steps.size());
  for (const auto& step : steps) {
    StepOutput o;
    switch (step.type) {
      case AlertStep::Type::Join:
        engine.add_student(step.student, step.ts);
        break;
      case AlertStep::Type::Event:
        o.raised = engine.ingest({step.student, step.kind, step.correct, step.ts});
        break;
      case AlertStep::Type::Tick:
        o.raised = engine.tick(step.ts);
        break;
    }
    o.cleared = engine.drain_cleared();
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<AlertStep> random_alert_steps(Rng& rng, int max_events, int max_students) {
  const int students = uniform(rng, 1, max_students);
  const int events = uniform(rng, 0, max_events);
  std::vector<PeerId> pool;
  for (const auto& id : random_feeds(rng, static_cast<std::size_t>(students))) {
    pool.push_back(id);
  }
  std::vector<PeerId> joined;
  std::vector<AlertStep> steps;
  TimestampMs t = uniform<TimestampMs>(rng, 0, 5000);
  int emitted = 0;
  while (emitted < events) {
    const int gap = uniform(rng, 0, 99);
    if (gap < 10) {
      // same instant
    } else if (gap < 45) {
      t += uniform<TimestampMs>(rng, 1, 5000);
    } else if (gap < 90) {
      t += uniform<TimestampMs>(rng, 5000, 90'000);
    } else {
      t += uniform<TimestampMs>(rng, 60'000, 400'000);
    }
    if (joined.size() < pool.size() && (joined.empty() || chance(rng, 0.15))) {
      AlertStep join;
      join.type = AlertStep::Type::Join;
      join.student = pool[joined.size()];
      join.ts = t;
      joined.push_back(join.student);
      steps.push_back(join);
      continue;
    }
    AlertStep step;
    if (chance(rng, 0.25)) {
      step.type = AlertStep::Type::Tick;
      step.ts = t;
    } else {
      step.type = AlertStep::Type::Event;
      step.student = joined[uniform<std::size_t>(rng, 0, joined.size() - 1)];
      step.ts = t;
      if (chance(rng, 0.1)) {
        step.ts = std::max<TimestampMs>(0, t - uniform<TimestampMs>(rng, 1, 30'000));
      }
      const int k = uniform(rng, 0, 99);
      if (k < 15) {
        step.kind = TelemetryKind::MouseClick;
      } else if (k < 30) {
        step.kind = TelemetryKind::KeyInput;
      } else if (k < 80) {
        step.kind = TelemetryKind::AnswerSubmitted;
        step.correct = chance(rng, 0.3);
      } else {
        step.kind = TelemetryKind::Heartbeat;
      }
    }
    steps.push_back(step);
    ++emitted;
  }
  return steps;
}

AlertRuleConfig random_alert_config(Rng& rng) {
  if (chance(rng, 0.5)) return AlertRuleConfig{};
  AlertRuleConfig c;
  const std::int64_t inactivity[] = {30, 60, 120};
  const std::int64_t windows[] = {30, 60, 120, 300};
  c.inactivity_secs = inactivity[uniform(rng, 0, 2)];
  c.incorrect_threshold = uniform(rng, 1, 4);
  c.incorrect_window_secs = windows[uniform(rng, 0, 3)];
  return c;
}

std::string describe(const Alert& a) {
  std::ostringstream os;
  os << to_string(a.kind) << "{" << a.student << " d=" << a.duration_secs
     << " n=" << a.count << " w=" << a.window_secs << " raised=" << a.raised_at
     << " cleared=" << (a.cleared_at ? std::to_string(*a.cleared_at) : "-") << "}";
  return os.str();
}

std::string describe(const StepOutput& o) {
  std::string s = "raised[";
  for (const auto& a : o.raised) s += describe(a) + " ";
  s += "] cleared[";
  for (const auto& a : o.cleared) s += describe(a) + " ";
  return s + "]";
}

// ---- protocol -----------------------------------------------------------------

std::string random_utf8(Rng& rng, std::size_t min_chars, std::size_t max_chars) {
  static const char* const kPieces[] = {
      "\"",           "\\",           "/",            "\n",           "\t",
      "\x01",         "\x7f",         "'",            "\xC3\xA9",     "\xC3\x9F",
      "\xCF\x80",     "\xE6\xBC\xA2", "\xE5\xAD\x97", "\xE2\x82\xAC", "\xE2\x80\x99",
      "\xF0\x9F\x98\x80", "\xF0\x9D\x84\x9E", " ",    "{",            "}"};
  const std::size_t n = uniform(rng, min_chars, max_chars);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (chance(rng, 0.75)) {
      out += static_cast<char>(uniform(rng, 0x20, 0x7e));
    } else {
      out += kPieces[uniform<std::size_t>(rng, 0, std::size(kPieces) - 1)];
    }
  }
  return out;
}

namespace {

PeerId random_peer(Rng& rng) { return PeerId{random_utf8(rng, 1, 12)}; }

std::vector<msg::RosterEntry> random_roster(Rng& rng) {
  std::vector<msg::RosterEntry> roster;
  const int n = uniform(rng, 0, 4);
  bool tutor = false;
  for (int i = 0; i < n; ++i) {
    msg::RosterEntry e;
    e.peer = random_peer(rng);
    e.alias = random_utf8(rng, 0, 10);
    e.role = !tutor && chance(rng, 0.3) ? Role::Tutor : Role::Student;
    tutor = tutor || e.role == Role::Tutor;
    e.status = static_cast<PresenceStatus>(uniform(rng, 0, 2));
    roster.push_back(std::move(e));
  }
  return roster;
}

QualityTier random_tier(Rng& rng) {
  QualityTier t;
  t.name = static_cast<TierName>(uniform(rng, 0, 3));
  t.width = uniform(rng, 0, 4096);
  t.height = uniform(rng, 0, 2160);
  t.kbps = uniform(rng, 0, 100'000);
  t.frame_interval_ms = chance(rng, 0.5) ? 0 : uniform(rng, 1, 60'000);
  return t;
}

msg::Payload random_payload(Rng& rng, MessageKind kind) {
  switch (kind) {
    case MessageKind::Join:
      return msg::Join{random_utf8(rng, 1, 16), chance(rng, 0.5) ? Role::Tutor : Role::Student};
    case MessageKind::JoinAck: {
      msg::JoinAck p;
      p.peer = random_peer(rng);
      p.role = chance(rng, 0.5) ? Role::Tutor : Role::Student;
      p.roster = random_roster(rng);
      for (int i = uniform(rng, 0, 2); i > 0; --i) p.ice_servers.push_back(random_utf8(rng, 0, 20));
      return p;
    }
    case MessageKind::Leave:
      return msg::Leave{random_peer(rng), random_utf8(rng, 0, 12)};
    case MessageKind::RosterUpdate:
      return msg::RosterUpdate{random_roster(rng)};
    case MessageKind::Offer:
      return msg::Offer{random_peer(rng), random_utf8(rng, 0, 200)};
    case MessageKind::Answer:
      return msg::Answer{random_peer(rng), random_utf8(rng, 0, 200)};
    case MessageKind::IceCandidate:
      return msg::IceCandidate{random_peer(rng), random_utf8(rng, 0, 60)};
    case MessageKind::QualityRequest:
      return msg::QualityRequest{chance(rng, 0.2) ? PeerId{} : random_peer(rng),
                                 random_tier(rng)};
    case MessageKind::Chat:
      return msg::Chat{random_peer(rng), chance(rng, 0.2) ? kBroadcastPeer : random_peer(rng),
                       random_utf8(rng, 1, chance(rng, 0.05) ? kMaxChatChars : 80)};
    case MessageKind::AvatarCommand: {
      const double rates[] = {0.5, 1.0, 1.25, 2.0};
      auto cmd = compose_command(random_peer(rng), random_utf8(rng, 0, 80), chance(rng, 0.5),
                                 chance(rng, 0.5), Lexicon{}, rates[uniform(rng, 0, 3)]);
      if (chance(rng, 0.3)) cmd.gesture = static_cast<Gesture>(uniform(rng, 0, 3));
      return cmd;
    }
    case MessageKind::Telemetry: {
      TelemetryEvent e;
      e.student = random_peer(rng);
      e.kind = static_cast<TelemetryKind>(uniform(rng, 0, 3));
      e.correct = e.kind == TelemetryKind::AnswerSubmitted && chance(rng, 0.5);
      e.ts = uniform<TimestampMs>(rng, 0, TimestampMs{1} << 45);
      return msg::Telemetry{e};
    }
    case MessageKind::Alert: {
      Alert a;
      a.student = random_peer(rng);
      a.kind = chance(rng, 0.5) ? AlertKind::Inactivity : AlertKind::RepeatedIncorrect;
      if (a.kind == AlertKind::Inactivity) {
        a.duration_secs = uniform<std::int64_t>(rng, 0, 100'000);
      } else {
        a.count = uniform(rng, 1, 50);
        a.window_secs = uniform<std::int64_t>(rng, 1, 10'000);
      }
      a.raised_at = uniform<TimestampMs>(rng, 0, TimestampMs{1} << 45);
      if (chance(rng, 0.5)) a.cleared_at = a.raised_at + uniform<TimestampMs>(rng, 0, 1'000'000);
      return msg::Alert{a, random_utf8(rng, 0, 60)};
    }
    case MessageKind::Heartbeat:
      return msg::Heartbeat{};
    case MessageKind::Error:
      return msg::Error{random_utf8(rng, 0, 20), random_utf8(rng, 0, 60)};
  }
  return msg::Heartbeat{};
}

using OJson = nlohmann::ordered_json;

void collect_pointers(const OJson& j, const OJson::json_pointer& at,
                      std::vector<OJson::json_pointer>& out) {
  out.push_back(at);
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) collect_pointers(*it, at / it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) collect_pointers(j[i], at / i, out);
  }
}

OJson random_scalar(Rng& rng) {
  switch (uniform(rng, 0, 9)) {
    case 0: return nullptr;
    case 1: return true;
    case 2: return 42;
    case 3: return -1;
    case 4: return 1.5;
    case 5: return "x";
    case 6: return OJson::array();
    case 7: return OJson::object();
    case 8: return "";
    default: return 18446744073709551615ULL;
  }
}

std::string mutate_structure(Rng& rng, const std::string& frame) {
  OJson j = OJson::parse(frame);
  switch (uniform(rng, 0, 4)) {
    case 0: j["v"] = random_scalar(rng); break;
    case 1: {
      static const char* const kTypes[] = {"Join", "Chat", "Alert", "Heartbeat",
                                           "Bogus", "", "chat", "Error"};
      j["type"] = kTypes[uniform<std::size_t>(rng, 0, std::size(kTypes) - 1)];
      break;
    }
    default: {
      std::vector<OJson::json_pointer> pointers;
      collect_pointers(j, OJson::json_pointer{}, pointers);
      const auto& p = pointers[uniform<std::size_t>(rng, 1, pointers.size() - 1)];
      if (chance(rng, 0.4)) {
        auto parent = p.parent_pointer();
        auto& container = j[parent];
        if (container.is_object()) {
          container.erase(p.back());
        } else if (container.is_array()) {
          container.erase(static_cast<std::size_t>(std::stoul(p.back())));
        }
      } else {
        j[p] = random_scalar(rng);
      }
      break;
    }
  }
  return j.dump();
}

char random_byte(Rng& rng) {
  static const char kSpecial[] = {'{', '}', '[', ']', '"', ',', ':', '\\', '\0',
                                  '\xff', '\xc3', '\x80', 'e', '-', '0'};
  if (chance(rng, 0.5)) return kSpecial[uniform<std::size_t>(rng, 0, std::size(kSpecial) - 1)];
  return static_cast<char>(uniform(rng, 0, 255));
}

}  // namespace

Envelope random_envelope(Rng& rng, MessageKind kind) {
  Envelope e;
  e.seq = uniform<std::uint64_t>(rng, 1, std::uint64_t{1} << 62);
  e.ts = uniform<TimestampMs>(rng, 0, TimestampMs{1} << 50);
  e.session = SessionId{random_utf8(rng, 1, 32)};
  e.sender = chance(rng, 0.2) ? kServerPeer : random_peer(rng);
  e.payload = random_payload(rng, kind);
  return e;
}

std::string fuzz_frame(Rng& rng, const std::string& frame) {
  std::string f = frame;
  switch (uniform(rng, 0, 8)) {
    case 0:
      for (int i = uniform(rng, 1, 3); i > 0 && !f.empty(); --i) {
        f[uniform<std::size_t>(rng, 0, f.size() - 1)] = random_byte(rng);
      }
      break;
    case 1:
      f.resize(uniform<std::size_t>(rng, 0, f.size()));
      break;
    case 2:
      for (int i = uniform(rng, 1, 4); i > 0; --i) {
        f.insert(f.begin() + static_cast<std::ptrdiff_t>(uniform<std::size_t>(rng, 0, f.size())),
                 random_byte(rng));
      }
      break;
    case 3: {
      const std::size_t a = uniform<std::size_t>(rng, 0, f.size());
      const std::size_t b = uniform<std::size_t>(rng, a, f.size());
      f.erase(a, b - a);
      break;
    }
    case 4: {
      const std::size_t a = uniform<std::size_t>(rng, 0, f.size());
      const std::size_t b = uniform<std::size_t>(rng, a, f.size());
      f.insert(a, f.substr(a, b - a));
      break;
    }
    case 5:
    case 6:
      f = mutate_structure(rng, frame);
      break;
    case 7: {
      f.clear();
      for (int i = uniform(rng, 0, 64); i > 0; --i) f += random_byte(rng);
      break;
    }
    default:
      f = chance(rng, 0.5) ? "[" + f + "]" : f + random_byte(rng);
      break;
  }
  return f;
}

// ---- event log ----------------------------------------------------------------

namespace {

const SessionId kDurableSession{"durable"};

std::size_t batch_size(std::uint64_t first) { return 1 + first % 4; }

[[noreturn]] void writer_main(const std::filesystem::path& root, int fd) {
  try {
    auto storage = std::make_shared<FileLogStorage>(root);
    auto clock = std::make_shared<ManualClock>(0);
    EventLog log(storage, clock);
    log.recover();
    if (!log.has_session(kDurableSession)) log.create_session(kDurableSession);
    for (;;) {
      const std::uint64_t first = log.last_seq(kDurableSession) + 1;
      clock->set(static_cast<TimestampMs>(first * 7));
      std::vector<PendingRecord> batch;
      for (std::size_t i = 0; i < batch_size(first); ++i) {
        auto r = expected_record(first + i, first);
        batch.push_back({r.category, r.subject, r.body});
      }
      const std::uint64_t last = log.append_batch(kDurableSession, std::move(batch));
      if (::write(fd, &last, sizeof last) != sizeof last) ::_exit(4);
    }
  } catch (...) {
    ::_exit(3);
  }
}

bool read_ack(int fd, std::uint64_t& value) {
  auto* p = reinterpret_cast<char*>(&value);
  std::size_t got = 0;
  while (got < sizeof value) {
    const ssize_t n = ::read(fd, p + got, sizeof value - got);
    if (n <= 0) return false;
    got += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

LogRecord expected_record(std::uint64_t seq, std::uint64_t first) {
  LogRecord r;
  r.global_seq = seq;
  r.ts = static_cast<TimestampMs>(first * 7);
  r.category = static_cast<LogCategory>(seq % 6);
  r.subject = "s" + std::to_string(seq % 5);
  r.body = "{\"seq\":" + std::to_string(seq) + ",\"batch\":" + std::to_string(first) +
           ",\"pad\":\"" + std::string(seq % 37, 'x') + "\"}";
  return r;
}

KillRestartResult kill_restart_iteration(const std::filesystem::path& root, Rng& rng,
                                         std::vector<std::string>& known_lines) {
  KillRestartResult result;
  int fds[2];
  if (::pipe(fds) != 0) {
    result.detail = "pipe failed";
    return result;
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    result.detail = "fork failed";
    return result;
  }
  if (pid == 0) {
    ::close(fds[0]);
    writer_main(root, fds[1]);
  }
  ::close(fds[1]);

  const int wait_for = uniform(rng, 0, 40);
  std::uint64_t ack = 0;
  bool writer_alive = true;
  for (int i = 0; i < wait_for && writer_alive; ++i) {
    writer_alive = read_ack(fds[0], ack);
    if (writer_alive) result.acknowledged = std::max(result.acknowledged, ack);
  }
  std::this_thread::sleep_for(std::chrono::microseconds(uniform(rng, 0, 1500)));
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  while (read_ack(fds[0], ack)) result.acknowledged = std::max(result.acknowledged, ack);
  ::close(fds[0]);

  if (!WIFSIGNALED(status)) {
    result.detail = "writer exited on its own with status " + std::to_string(status);
    return result;
  }

  FileLogStorage storage(root);
  const auto sessions = storage.sessions();
  if (std::find(sessions.begin(), sessions.end(), kDurableSession) == sessions.end()) {
    result.ok = result.acknowledged == 0 && known_lines.empty();
    if (!result.ok) result.detail = "log vanished";
    return result;
  }

  std::vector<LogRecord> records;
  try {
    records = storage.load(kDurableSession);
  } catch (const std::exception& e) {
    result.detail = std::string("reload failed: ") + e.what();
    return result;
  }
  result.recovered = records.size();

  if (records.size() < result.acknowledged) {
    result.detail = "acknowledged " + std::to_string(result.acknowledged) +
                    " records but only " + std::to_string(records.size()) + " survived";
    return result;
  }
  if (records.size() < known_lines.size()) {
    result.detail = "log shrank from " + std::to_string(known_lines.size()) + " to " +
                    std::to_string(records.size());
    return result;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LogRecord& r = records[i];
    if (r.global_seq != i + 1) {
      result.detail = "gap at position " + std::to_string(i);
      return result;
    }
    const auto body = nlohmann::json::parse(r.body, nullptr, false);
    if (!body.is_object() || !body.contains("batch") || !body["batch"].is_number_unsigned()) {
      result.detail = "unreadable body at seq " + std::to_string(r.global_seq);
      return result;
    }
    const auto first = body["batch"].get<std::uint64_t>();
    if (first > r.global_seq || r.global_seq >= first + batch_size(first) ||
        format_record(r) != format_record(expected_record(r.global_seq, first))) {
      result.detail = "record " + std::to_string(r.global_seq) + " differs: " + format_record(r);
      return result;
    }
    const std::string line = format_record(r);
    if (i < known_lines.size() && known_lines[i] != line) {
      result.detail = "record " + std::to_string(r.global_seq) + " changed after restart";
      return result;
    }
    if (i >= known_lines.size()) known_lines.push_back(line);
  }
  result.ok = true;
  return result;
}

}  // namespace tutorhub::testing

#include "tutorhub/protocol.hpp"

#include <array>
#include <limits>

#include <json.hpp>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::array<std::string_view, kMessageKindCount> kKindNames = {
    "Join",         "JoinAck",        "Leave", "RosterUpdate",  "Offer",
    "Answer",       "IceCandidate",   "QualityRequest", "Chat", "AvatarCommand",
    "Telemetry",    "Alert",          "Heartbeat",      "Error"};

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedFrame, what);
}

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidEnvelope, what);
}

// ---- field readers: missing or mistyped fields are MalformedFrame ---------

const Json& field(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) malformed(std::string("missing field '") + key + "'");
  return *it;
}

std::string get_string(const Json& obj, const char* key) {
  const Json& v = field(obj, key);
  if (!v.is_string()) malformed(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::int64_t get_int(const Json& obj, const char* key) {
  const Json& v = field(obj, key);
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      malformed(std::string("field '") + key + "' out of range");
    }
    return static_cast<std::int64_t>(u);
  }
  if (!v.is_number_integer()) {
    malformed(std::string("field '") + key + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

int get_small_int(const Json& obj, const char* key) {
  const std::int64_t v = get_int(obj, key);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    malformed(std::string("field '") + key + "' out of range");
  }
  return static_cast<int>(v);
}

bool get_bool(const Json& obj, const char* key) {
  const Json& v = field(obj, key);
  if (!v.is_boolean()) malformed(std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

const Json& get_array(const Json& obj, const char* key) {
  const Json& v = field(obj, key);
  if (!v.is_array()) malformed(std::string("field '") + key + "' must be an array");
  return v;
}

const Json& get_object(const Json& obj, const char* key) {
  const Json& v = field(obj, key);
  if (!v.is_object()) malformed(std::string("field '") + key + "' must be an object");
  return v;
}

template <class E, class Parse>
E get_enum(const Json& obj, const char* key, Parse parse) {
  const std::string text = get_string(obj, key);
  auto value = parse(text);
  if (!value) malformed(std::string("field '") + key + "' has unknown value '" + text + "'");
  return *value;
}

PeerId get_peer(const Json& obj, const char* key) { return PeerId{get_string(obj, key)}; }

// ---- payload <-> json ------------------------------------------------------

Json roster_to_json(const std::vector<msg::RosterEntry>& roster) {
  Json arr = Json::array();
  for (const auto& e : roster) {
    Json j;
    j["peer"] = e.peer.str();
    j["alias"] = e.alias;
    j["role"] = to_string(e.role);
    j["status"] = to_string(e.status);
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<msg::RosterEntry> roster_from_json(const Json& arr) {
  std::vector<msg::RosterEntry> out;
  for (const Json& j : arr) {
    if (!j.is_object()) malformed("roster entry must be an object");
    msg::RosterEntry e;
    e.peer = get_peer(j, "peer");
    e.alias = get_string(j, "alias");
    e.role = get_enum<Role>(j, "role", parse_role);
    e.status = get_enum<PresenceStatus>(j, "status", parse_presence);
    out.push_back(std::move(e));
  }
  return out;
}

Json tier_to_json(const QualityTier& t) {
  Json j;
  j["name"] = to_string(t.name);
  j["width"] = t.width;
  j["height"] = t.height;
  j["kbps"] = t.kbps;
  j["frame_interval_ms"] = t.frame_interval_ms;
  return j;
}

QualityTier tier_from_json(const Json& j) {
  QualityTier t;
  t.name = get_enum<TierName>(j, "name", parse_tier_name);
  t.width = get_small_int(j, "width");
  t.height = get_small_int(j, "height");
  t.kbps = get_small_int(j, "kbps");
  t.frame_interval_ms = get_small_int(j, "frame_interval_ms");
  return t;
}

Json timeline_to_json(const VisemeTimeline& tl) {
  Json entries = Json::array();
  for (const auto& e : tl.entries) {
    entries.push_back(Json::array({to_string(e.viseme), e.start_ms, e.duration_ms}));
  }
  Json j;
  j["entries"] = std::move(entries);
  j["total_ms"] = tl.total_ms;
  return j;
}

VisemeTimeline timeline_from_json(const Json& j) {
  VisemeTimeline tl;
  for (const Json& e : get_array(j, "entries")) {
    if (!e.is_array() || e.size() != 3 || !e[0].is_string() ||
        !e[1].is_number_integer() || !e[2].is_number_integer()) {
      malformed("timeline entry must be [viseme, start_ms, duration_ms]");
    }
    auto v = parse_viseme(e[0].get<std::string>());
    if (!v) malformed("unknown viseme");
    tl.entries.push_back({*v, e[1].get<std::int64_t>(), e[2].get<std::int64_t>()});
  }
  tl.total_ms = get_int(j, "total_ms");
  return tl;
}

struct ToJson {
  Json operator()(const msg::Join& p) const {
    Json j;
    j["alias"] = p.alias;
    j["role"] = to_string(p.role);
    return j;
  }
  Json operator()(const msg::JoinAck& p) const {
    Json j;
    j["peer"] = p.peer.str();
    j["role"] = to_string(p.role);
    j["roster"] = roster_to_json(p.roster);
    j["ice_servers"] = p.ice_servers;
    return j;
  }
  Json operator()(const msg::Leave& p) const {
    Json j;
    j["peer"] = p.peer.str();
    j["reason"] = p.reason;
    return j;
  }
  Json operator()(const msg::RosterUpdate& p) const {
    Json j;
    j["roster"] = roster_to_json(p.roster);
    return j;
  }
  Json operator()(const msg::Offer& p) const {
    Json j;
    j["to"] = p.to.str();
    j["sdp"] = p.sdp;
    return j;
  }
  Json operator()(const msg::Answer& p) const {
    Json j;
    j["to"] = p.to.str();
    j["sdp"] = p.sdp;
    return j;
  }
  Json operator()(const msg::IceCandidate& p) const {
    Json j;
    j["to"] = p.to.str();
    j["candidate"] = p.candidate;
    return j;
  }
  Json operator()(const msg::QualityRequest& p) const {
    Json j;
    j["target"] = p.target.str();
    j["tier"] = tier_to_json(p.tier);
    return j;
  }
  Json operator()(const msg::Chat& p) const {
    Json j;
    j["from"] = p.from.str();
    j["to"] = p.to.str();
    j["text"] = p.text;
    return j;
  }
  Json operator()(const msg::AvatarCommand& p) const {
    Json j;
    j["target"] = p.target.str();
    j["speech_text"] = p.speech_text;
    j["show_bubble"] = p.show_bubble;
    j["gesture"] = to_string(p.gesture);
    j["attention_wave"] = p.attention_wave;
    j["timeline"] = timeline_to_json(p.timeline);
    return j;
  }
  Json operator()(const msg::Telemetry& p) const {
    Json j;
    j["student"] = p.event.student.str();
    j["kind"] = to_string(p.event.kind);
    if (p.event.kind == TelemetryKind::AnswerSubmitted) j["correct"] = p.event.correct;
    j["ts"] = p.event.ts;
    return j;
  }
  Json operator()(const msg::Alert& p) const {
    const auto& a = p.alert;
    Json j;
    j["student"] = a.student.str();
    j["kind"] = to_string(a.kind);
    if (a.kind == AlertKind::Inactivity) {
      j["duration_secs"] = a.duration_secs;
    } else {
      j["count"] = a.count;
      j["window_secs"] = a.window_secs;
    }
    j["raised_at"] = a.raised_at;
    j["cleared_at"] = a.cleared_at ? Json(*a.cleared_at) : Json(nullptr);
    j["message"] = p.message;
    return j;
  }
  Json operator()(const msg::Heartbeat&) const { return Json::object(); }
  Json operator()(const msg::Error& p) const {
    Json j;
    j["code"] = p.code;
    j["reason"] = p.reason;
    return j;
  }
};

msg::Payload payload_from_json(MessageKind kind, const Json& j) {
  switch (kind) {
    case MessageKind::Join:
      return msg::Join{get_string(j, "alias"), get_enum<Role>(j, "role", parse_role)};
    case MessageKind::JoinAck: {
      msg::JoinAck p;
      p.peer = get_peer(j, "peer");
      p.role = get_enum<Role>(j, "role", parse_role);
      p.roster = roster_from_json(get_array(j, "roster"));
      for (const Json& s : get_array(j, "ice_servers")) {
        if (!s.is_string()) malformed("ice server must be a string");
        p.ice_servers.push_back(s.get<std::string>());
      }
      return p;
    }
    case MessageKind::Leave:
      return msg::Leave{get_peer(j, "peer"), get_string(j, "reason")};
    case MessageKind::RosterUpdate:
      return msg::RosterUpdate{roster_from_json(get_array(j, "roster"))};
    case MessageKind::Offer:
      return msg::Offer{get_peer(j, "to"), get_string(j, "sdp")};
    case MessageKind::Answer:
      return msg::Answer{get_peer(j, "to"), get_string(j, "sdp")};
    case MessageKind::IceCandidate:
      return msg::IceCandidate{get_peer(j, "to"), get_string(j, "candidate")};
    case MessageKind::QualityRequest:
      return msg::QualityRequest{get_peer(j, "target"),
                                 tier_from_json(get_object(j, "tier"))};
    case MessageKind::Chat:
      return msg::Chat{get_peer(j, "from"), get_peer(j, "to"), get_string(j, "text")};
    case MessageKind::AvatarCommand: {
      msg::AvatarCommand p;
      p.target = get_peer(j, "target");
      p.speech_text = get_string(j, "speech_text");
      p.show_bubble = get_bool(j, "show_bubble");
      p.gesture = get_enum<Gesture>(j, "gesture", parse_gesture);
      p.attention_wave = get_bool(j, "attention_wave");
      p.timeline = timeline_from_json(get_object(j, "timeline"));
      return p;
    }
    case MessageKind::Telemetry: {
      msg::Telemetry p;
      p.event.student = get_peer(j, "student");
      p.event.kind = get_enum<TelemetryKind>(j, "kind", parse_telemetry_kind);
      if (p.event.kind == TelemetryKind::AnswerSubmitted) {
        p.event.correct = get_bool(j, "correct");
      }
      p.event.ts = get_int(j, "ts");
      return p;
    }
    case MessageKind::Alert: {
      msg::Alert p;
      auto& a = p.alert;
      a.student = get_peer(j, "student");
      a.kind = get_enum<AlertKind>(j, "kind", parse_alert_kind);
      if (a.kind == AlertKind::Inactivity) {
        a.duration_secs = get_int(j, "duration_secs");
      } else {
        a.count = get_small_int(j, "count");
        a.window_secs = get_int(j, "window_secs");
      }
      a.raised_at = get_int(j, "raised_at");
      const Json& cleared = field(j, "cleared_at");
      if (!cleared.is_null()) a.cleared_at = get_int(j, "cleared_at");
      p.message = get_string(j, "message");
      return p;
    }
    case MessageKind::Heartbeat:
      return msg::Heartbeat{};
    case MessageKind::Error:
      return msg::Error{get_string(j, "code"), get_string(j, "reason")};
  }
  throw Error(ErrorCode::UnknownKind, "unhandled kind");
}

// ---- invariants ------------------------------------------------------------

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

void require_text(std::string_view s, const char* what) {
  if (!valid_utf8(s)) invalid(std::string(what) + " is not valid UTF-8");
}

void require_id(const std::string& id, const char* what) {
  if (id.empty()) invalid(std::string(what) + " must not be empty");
  require_text(id, what);
}

struct Validate {
  void operator()(const msg::Join& p) const {
    if (p.alias.empty()) invalid("alias must not be empty");
    require_text(p.alias, "alias");
  }
  void roster(const std::vector<msg::RosterEntry>& r) const {
    int tutors = 0;
    for (const auto& e : r) {
      require_id(e.peer.str(), "roster peer");
      require_text(e.alias, "roster alias");
      tutors += e.role == Role::Tutor ? 1 : 0;
    }
    if (tutors > 1) invalid("roster holds more than one tutor");
  }
  void operator()(const msg::JoinAck& p) const {
    require_id(p.peer.str(), "peer");
    roster(p.roster);
    for (const auto& s : p.ice_servers) require_text(s, "ice server");
  }
  void operator()(const msg::Leave& p) const {
    require_id(p.peer.str(), "peer");
    require_text(p.reason, "reason");
  }
  void operator()(const msg::RosterUpdate& p) const { roster(p.roster); }
  void operator()(const msg::Offer& p) const {
    require_id(p.to.str(), "target");
    require_text(p.sdp, "sdp");
  }
  void operator()(const msg::Answer& p) const {
    require_id(p.to.str(), "target");
    require_text(p.sdp, "sdp");
  }
  void operator()(const msg::IceCandidate& p) const {
    require_id(p.to.str(), "target");
    require_text(p.candidate, "candidate");
  }
  void operator()(const msg::QualityRequest& p) const {
    require_text(p.target.str(), "target");
    const auto& t = p.tier;
    if (t.width < 0 || t.height < 0 || t.kbps < 0 || t.frame_interval_ms < 0) {
      invalid("tier fields must be non-negative");
    }
  }
  void operator()(const msg::Chat& p) const {
    require_id(p.from.str(), "chat sender");
    require_id(p.to.str(), "chat recipient");
    require_text(p.text, "chat text");
    if (p.text.empty()) invalid("chat text must not be empty");
    if (utf8_length(p.text) > kMaxChatChars) invalid("chat text exceeds 2000 characters");
  }
  void operator()(const msg::AvatarCommand& p) const {
    require_id(p.target.str(), "avatar target");
    require_text(p.speech_text, "speech text");
    if (!p.timeline.well_formed()) invalid("viseme timeline is not well formed");
    if (!p.timeline.entries.empty() && p.speech_text.empty()) {
      invalid("speech text required with a non-empty timeline");
    }
  }
  void operator()(const msg::Telemetry& p) const {
    require_id(p.event.student.str(), "telemetry student");
    if (p.event.kind != TelemetryKind::AnswerSubmitted && p.event.correct) {
      invalid("'correct' only applies to AnswerSubmitted");
    }
  }
  void operator()(const msg::Alert& p) const {
    const auto& a = p.alert;
    require_id(a.student.str(), "alert student");
    require_text(p.message, "alert message");
    if (a.kind == AlertKind::Inactivity) {
      if (a.duration_secs < 0 || a.count != 0 || a.window_secs != 0) {
        invalid("inactivity alert fields out of place");
      }
    } else if (a.count <= 0 || a.window_secs <= 0 || a.duration_secs != 0) {
      invalid("repeated-incorrect alert needs positive count and window");
    }
    if (a.cleared_at && *a.cleared_at < a.raised_at) {
      invalid("alert cleared before it was raised");
    }
  }
  void operator()(const msg::Heartbeat&) const {}
  void operator()(const msg::Error& p) const {
    require_text(p.code, "error code");
    require_text(p.reason, "error reason");
  }
};

MessageKind kind_from_type(const Json& obj) {
  const std::string type = get_string(obj, "type");
  auto kind = parse_message_kind(type);
  if (!kind) throw Error(ErrorCode::UnknownKind, "unknown message type '" + type + "'");
  return *kind;
}

Json parse_object(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    malformed(e.what());
  }
  if (!j.is_object()) malformed("frame must be a JSON object");
  return j;
}

}  // namespace

std::string_view to_string(MessageKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

std::optional<MessageKind> parse_message_kind(std::string_view text) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == text) return static_cast<MessageKind>(i);
  }
  return std::nullopt;
}

std::string_view to_string(Role role) {
  return role == Role::Tutor ? "Tutor" : "Student";
}

std::optional<Role> parse_role(std::string_view text) {
  if (text == "Tutor") return Role::Tutor;
  if (text == "Student") return Role::Student;
  return std::nullopt;
}

std::string_view to_string(PresenceStatus status) {
  switch (status) {
    case PresenceStatus::Connected:
      return "Connected";
    case PresenceStatus::Stale:
      return "Stale";
    case PresenceStatus::Disconnected:
      break;
  }
  return "Disconnected";
}

std::optional<PresenceStatus> parse_presence(std::string_view text) {
  for (auto s : {PresenceStatus::Connected, PresenceStatus::Stale,
                 PresenceStatus::Disconnected}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (unsigned char c : text) n += (c & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

void validate(const Envelope& e) {
  if (e.version != kProtocolVersion) invalid("version must be 1");
  if (e.seq == 0) invalid("seq starts at 1");
  if (e.seq > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    invalid("seq out of range");
  }
  if (e.ts < 0) invalid("timestamp must be non-negative");
  require_id(e.session.str(), "session");
  require_id(e.sender.str(), "sender");
  std::visit(Validate{}, e.payload);
}

std::string encode_payload(const msg::Payload& payload) {
  std::visit(Validate{}, payload);
  return std::visit(ToJson{}, payload).dump();
}

msg::Payload decode_payload(MessageKind kind, std::string_view body) {
  msg::Payload p = payload_from_json(kind, parse_object(body));
  std::visit(Validate{}, p);
  return p;
}

std::string encode(const Envelope& e) {
  validate(e);
  Json j;
  j["v"] = e.version;
  j["seq"] = e.seq;
  j["ts"] = e.ts;
  j["session"] = e.session.str();
  j["sender"] = e.sender.str();
  j["type"] = to_string(e.kind());
  j["payload"] = std::visit(ToJson{}, e.payload);
  return j.dump();
}

Envelope decode(std::string_view frame) {
  const Json j = parse_object(frame);

  const Json& v = field(j, "v");
  if (!v.is_number_integer()) malformed("field 'v' must be an integer");
  if (v.get<std::int64_t>() != kProtocolVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "unsupported protocol version " + v.dump());
  }

  Envelope e;
  const std::int64_t seq = get_int(j, "seq");
  if (seq < 1) invalid("seq starts at 1");
  e.seq = static_cast<std::uint64_t>(seq);
  e.ts = get_int(j, "ts");
  e.session = SessionId{get_string(j, "session")};
  e.sender = PeerId{get_string(j, "sender")};
  const MessageKind kind = kind_from_type(j);
  e.payload = payload_from_json(kind, get_object(j, "payload"));
  validate(e);
  return e;
}

void SequenceValidator::accept(const PeerId& sender, std::uint64_t seq) {
  std::uint64_t& last = last_[sender];
  if (seq != last + 1) {
    throw Error(ErrorCode::SequenceViolation,
                "sender " + sender.str() + " expected seq " +
                    std::to_string(last + 1) + ", got " + std::to_string(seq));
  }
  last = seq;
}

}  // namespace tutorhub

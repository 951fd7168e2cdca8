#include "tutorhub/avatar.hpp"

#include <array>
#include <cctype>
#include <cmath>

#include "tutorhub/error.hpp"

namespace tutorhub {

namespace {

constexpr std::array<std::string_view, 4> kCueNames = {
    "Greeting", "Encouragement", "Corrective", "Neutral"};
constexpr std::array<std::string_view, 4> kGestureNames = {"Wave", "Nod",
                                                           "ThumbsUp", "None"};
constexpr std::array<std::string_view, 6> kVisemeNames = {
    "Rest", "Open", "Closed", "LipTeeth", "Round", "Silence"};

template <std::size_t N>
std::optional<std::size_t> index_of(const std::array<std::string_view, N>& names,
                                    std::string_view text) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return i;
  }
  return std::nullopt;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 ||
         (static_cast<unsigned char>(c) & 0x80) != 0;
}

// Lowercases ASCII and folds the typographic apostrophe (U+2019) to '.
std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, 3, "\xE2\x80\x99") == 0) {
      out += '\'';
      i += 2;
      continue;
    }
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
  }
  return out;
}

bool contains_word(std::string_view haystack, std::string_view keyword) {
  if (keyword.empty()) return false;
  for (std::size_t pos = haystack.find(keyword); pos != std::string_view::npos;
       pos = haystack.find(keyword, pos + 1)) {
    const std::size_t end = pos + keyword.size();
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

int hits(std::string_view text, const std::vector<std::string>& keywords) {
  int n = 0;
  for (const auto& k : keywords) n += contains_word(text, k) ? 1 : 0;
  return n;
}

Viseme classify_byte(unsigned char c) {
  if (c >= 0x80) return Viseme::Rest;  // non-ASCII letter
  if (std::isdigit(c)) return Viseme::Rest;
  if (!std::isalpha(c)) return Viseme::Silence;
  switch (std::tolower(c)) {
    case 'a':
    case 'e':
    case 'i':
      return Viseme::Open;
    case 'o':
    case 'u':
      return Viseme::Round;
    case 'm':
    case 'b':
    case 'p':
      return Viseme::Closed;
    case 'f':
    case 'v':
      return Viseme::LipTeeth;
    default:
      return Viseme::Rest;
  }
}

}  // namespace

std::string_view to_string(SemanticCue cue) {
  return kCueNames[static_cast<std::size_t>(cue)];
}
std::string_view to_string(Gesture gesture) {
  return kGestureNames[static_cast<std::size_t>(gesture)];
}
std::string_view to_string(Viseme viseme) {
  return kVisemeNames[static_cast<std::size_t>(viseme)];
}

std::optional<Gesture> parse_gesture(std::string_view text) {
  if (auto i = index_of(kGestureNames, text)) return static_cast<Gesture>(*i);
  return std::nullopt;
}

std::optional<Viseme> parse_viseme(std::string_view text) {
  if (auto i = index_of(kVisemeNames, text)) return static_cast<Viseme>(*i);
  return std::nullopt;
}

bool VisemeTimeline::well_formed() const {
  std::int64_t cursor = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.duration_ms <= 0 || e.start_ms != cursor) return false;
    if (i > 0 && e.start_ms <= entries[i - 1].start_ms) return false;
    cursor = e.start_ms + e.duration_ms;
  }
  return total_ms == cursor;
}

std::vector<std::string> default_canned_prompts() {
  return {
      "Let's break this down step by step.",
      "Take another look at your last step.",
      "Great job, keep it up!",
      "Hi! Let me know if you need help.",
  };
}

SemanticCue classify_intent(std::string_view text, const Lexicon& lexicon) {
  const std::string lowered = normalize(text);
  const std::array<int, 3> counts = {hits(lowered, lexicon.greeting),
                                     hits(lowered, lexicon.encouragement),
                                     hits(lowered, lexicon.corrective)};
  int best = 0;
  SemanticCue cue = SemanticCue::Neutral;
  // Strict '>' keeps the earlier (higher-priority) cue on ties.
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > best) {
      best = counts[i];
      cue = static_cast<SemanticCue>(i);
    }
  }
  return cue;
}

Gesture gesture_for(SemanticCue cue) {
  switch (cue) {
    case SemanticCue::Greeting:
      return Gesture::Wave;
    case SemanticCue::Encouragement:
      return Gesture::ThumbsUp;
    case SemanticCue::Corrective:
      return Gesture::Nod;
    case SemanticCue::Neutral:
      break;
  }
  return Gesture::None;
}

VisemeTimeline build_timeline(std::string_view text, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw Error(ErrorCode::InvalidRate, "speech rate must be positive");
  }

  // Collapse the text into runs of identical visemes; a silence run counts
  // as a single unit however long it is.
  struct Run {
    Viseme viseme;
    std::int64_t units;
  };
  std::vector<Run> runs;
  for (unsigned char c : text) {
    if (c >= 0x80 && c < 0xC0) continue;  // UTF-8 continuation byte
    const Viseme v = classify_byte(c);
    if (!runs.empty() && runs.back().viseme == v) {
      if (v != Viseme::Silence) ++runs.back().units;
      continue;
    }
    runs.push_back({v, 1});
  }

  VisemeTimeline timeline;
  timeline.entries.reserve(runs.size());
  std::int64_t cursor = 0;
  for (const auto& run : runs) {
    const double base = run.viseme == Viseme::Silence ? kSilenceMs : kVisemeMs;
    const auto duration = std::max<std::int64_t>(
        1, std::llround(static_cast<double>(run.units) * base / rate));
    timeline.entries.push_back({run.viseme, cursor, duration});
    cursor += duration;
  }
  timeline.total_ms = cursor;
  return timeline;
}

AvatarCommand compose_command(const PeerId& target, std::string text,
                              bool show_bubble, bool attention_wave,
                              const Lexicon& lexicon, double rate) {
  AvatarCommand cmd;
  cmd.target = target;
  cmd.gesture = gesture_for(classify_intent(text, lexicon));
  cmd.timeline = build_timeline(text, rate);
  cmd.speech_text = std::move(text);
  cmd.show_bubble = show_bubble;
  cmd.attention_wave = attention_wave;
  return cmd;
}

}  // namespace tutorhub

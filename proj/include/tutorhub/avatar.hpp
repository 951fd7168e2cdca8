#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tutorhub/types.hpp"

namespace tutorhub {

enum class SemanticCue { Greeting, Encouragement, Corrective, Neutral };
enum class Gesture { Wave, Nod, ThumbsUp, None };
enum class Viseme { Rest, Open, Closed, LipTeeth, Round, Silence };

std::string_view to_string(SemanticCue cue);
std::string_view to_string(Gesture gesture);
std::string_view to_string(Viseme viseme);
std::optional<Gesture> parse_gesture(std::string_view text);
std::optional<Viseme> parse_viseme(std::string_view text);

struct VisemeEntry {
  Viseme viseme = Viseme::Rest;
  std::int64_t start_ms = 0;
  std::int64_t duration_ms = 0;

  friend bool operator==(const VisemeEntry&, const VisemeEntry&) = default;
};

struct VisemeTimeline {
  std::vector<VisemeEntry> entries;
  std::int64_t total_ms = 0;

  // Starts strictly increase, entries are back to back, and total_ms is the
  // end of the last entry (0 when empty).
  bool well_formed() const;

  friend bool operator==(const VisemeTimeline&, const VisemeTimeline&) = default;
};

struct AvatarCommand {
  PeerId target;
  std::string speech_text;
  bool show_bubble = true;
  Gesture gesture = Gesture::None;
  bool attention_wave = false;
  VisemeTimeline timeline;

  friend bool operator==(const AvatarCommand&, const AvatarCommand&) = default;
};

// Keywords are lowercase and match whole words (or whole phrases) inside the
// lowercased message.
struct Lexicon {
  std::vector<std::string> greeting{"hi", "hello", "hey", "welcome",
                                    "good morning"};
  std::vector<std::string> encouragement{"great",     "good job", "well done",
                                         "nice",      "excellent", "awesome",
                                         "keep it up"};
  std::vector<std::string> corrective{"try",         "instead",      "incorrect",
                                      "check",       "let's break",  "revisit",
                                      "step by step", "isolating"};
};

std::vector<std::string> default_canned_prompts();

// Most keyword hits wins; ties resolve Greeting > Encouragement > Corrective,
// and zero hits is Neutral.
SemanticCue classify_intent(std::string_view text, const Lexicon& lexicon = {});

Gesture gesture_for(SemanticCue cue);

inline constexpr double kVisemeMs = 70.0;
inline constexpr double kSilenceMs = 120.0;

// Text-derived mouth-shape timeline. Throws InvalidRate when rate <= 0.
VisemeTimeline build_timeline(std::string_view text, double rate = 1.0);

// Composes the command a student client plays for a tutor message.
AvatarCommand compose_command(const PeerId& target, std::string text,
                              bool show_bubble, bool attention_wave,
                              const Lexicon& lexicon = {}, double rate = 1.0);

}  // namespace tutorhub

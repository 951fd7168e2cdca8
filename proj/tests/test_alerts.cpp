#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "tutorhub/alerts.hpp"
#include "tutorhub/error.hpp"

namespace tutorhub {
namespace {

constexpr TimestampMs kSec = 1000;

const PeerId kAna{"ana"};
const PeerId kBen{"ben"};

TelemetryEvent answer(const PeerId& s, bool correct, TimestampMs ts) {
  return {s, TelemetryKind::AnswerSubmitted, correct, ts};
}

TEST(Alerts, ThreeIncorrectWithinWindowRaiseOnce) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  EXPECT_TRUE(engine.ingest(answer(kAna, false, 10 * kSec)).empty());
  EXPECT_TRUE(engine.ingest(answer(kAna, false, 20 * kSec)).empty());
  const auto raised = engine.ingest(answer(kAna, false, 30 * kSec));
  ASSERT_EQ(raised.size(), 1u);
  EXPECT_EQ(raised[0].kind, AlertKind::RepeatedIncorrect);
  EXPECT_EQ(raised[0].count, 3);
  EXPECT_EQ(raised[0].window_secs, 300);
  EXPECT_EQ(raised[0].raised_at, 30 * kSec);
  EXPECT_TRUE(engine.ingest(answer(kAna, false, 40 * kSec)).empty());
}

TEST(Alerts, CorrectAnswerEmptiesWindow) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  std::size_t raised = 0;
  raised += engine.ingest(answer(kAna, false, 1 * kSec)).size();
  raised += engine.ingest(answer(kAna, false, 2 * kSec)).size();
  raised += engine.ingest(answer(kAna, true, 3 * kSec)).size();
  raised += engine.ingest(answer(kAna, false, 4 * kSec)).size();
  raised += engine.ingest(answer(kAna, false, 5 * kSec)).size();
  EXPECT_EQ(raised, 0u);
}

TEST(Alerts, IncorrectAnswersOutsideWindow) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  EXPECT_TRUE(engine.ingest(answer(kAna, false, 0)).empty());
  EXPECT_TRUE(engine.ingest(answer(kAna, false, 301 * kSec)).empty());
}

TEST(Alerts, WindowBoundaryIsInclusive) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  engine.ingest(answer(kAna, false, 0));
  engine.ingest(answer(kAna, false, 100 * kSec));
  EXPECT_EQ(engine.ingest(answer(kAna, false, 300 * kSec)).size(), 1u);
}

TEST(Alerts, InactivityAt120NotAt119) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  EXPECT_TRUE(engine.tick(119 * kSec).empty());
  const auto raised = engine.tick(120 * kSec);
  ASSERT_EQ(raised.size(), 1u);
  EXPECT_EQ(raised[0].kind, AlertKind::Inactivity);
  EXPECT_EQ(raised[0].duration_secs, 120);
  EXPECT_EQ(raised[0].raised_at, 120 * kSec);
  EXPECT_TRUE(engine.tick(180 * kSec).empty());
  EXPECT_EQ(engine.open_alerts().size(), 1u);
}

TEST(Alerts, HeartbeatIsNotActivity) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  engine.ingest({kAna, TelemetryKind::Heartbeat, false, 100 * kSec});
  EXPECT_EQ(engine.tick(120 * kSec).size(), 1u);
}

TEST(Alerts, ActivityClearsInactivity) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  engine.add_student(kBen, 0);
  EXPECT_EQ(engine.tick(120 * kSec).size(), 2u);
  engine.ingest({kAna, TelemetryKind::MouseClick, false, 130 * kSec});
  const auto cleared = engine.drain_cleared();
  ASSERT_EQ(cleared.size(), 1u);
  EXPECT_EQ(cleared[0].student, kAna);
  EXPECT_EQ(cleared[0].cleared_at, 130 * kSec);
  EXPECT_TRUE(engine.drain_cleared().empty());
  // An immediate tick raises nothing for the student who just acted.
  EXPECT_TRUE(engine.tick(130 * kSec).empty());
}

TEST(Alerts, CorrectAnswerClearsRepeatedIncorrect) {
  AlertEngine engine;
  engine.add_student(kAna, 0);
  for (int i = 1; i <= 3; ++i) engine.ingest(answer(kAna, false, i * kSec));
  engine.drain_cleared();
  engine.ingest(answer(kAna, true, 10 * kSec));
  const auto cleared = engine.drain_cleared();
  ASSERT_EQ(cleared.size(), 1u);
  EXPECT_EQ(cleared[0].kind, AlertKind::RepeatedIncorrect);
  EXPECT_EQ(cleared[0].raised_at, 3 * kSec);
  EXPECT_EQ(cleared[0].cleared_at, 10 * kSec);
}

TEST(Alerts, OutOfOrderEventsAreClamped) {
  AlertEngine engine;
  engine.add_student(kAna, 50 * kSec);
  engine.ingest({kAna, TelemetryKind::KeyInput, false, 10 * kSec});
  // Clamped to the join time, so idle is measured from 50 s.
  EXPECT_TRUE(engine.tick(169 * kSec).empty());
  EXPECT_EQ(engine.tick(170 * kSec).size(), 1u);
}

TEST(Alerts, UnknownStudent) {
  AlertEngine engine;
  try {
    engine.ingest(answer(kAna, false, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownStudent);
  }
}

TEST(Alerts, ConfigMustBePositive) {
  EXPECT_THROW(AlertEngine(AlertRuleConfig{0, 3, 300}), Error);
  EXPECT_THROW(AlertEngine(AlertRuleConfig{120, 0, 300}), Error);
  EXPECT_THROW(AlertEngine(AlertRuleConfig{120, 3, 0}), Error);
}

TEST(Alerts, Render) {
  Alert a;
  a.kind = AlertKind::Inactivity;
  a.duration_secs = 120;
  EXPECT_EQ(render_alert(a, "Student X"), "Student X was inactive for 2 minutes");
  a.duration_secs = 90;
  EXPECT_EQ(render_alert(a, "A"), "A was inactive for 90 seconds");
  a.duration_secs = 60;
  EXPECT_EQ(render_alert(a, "A"), "A was inactive for 1 minute");
  Alert r;
  r.kind = AlertKind::RepeatedIncorrect;
  r.count = 3;
  r.window_secs = 300;
  EXPECT_EQ(render_alert(r, "B"), "B submitted 3 incorrect answers in the last 5 minutes");
}

TEST(Alerts, MatchesRescanOracle) {
  testing::Rng rng(3);
  std::size_t raised = 0, cleared = 0;
  for (int i = 0; i < 300; ++i) {
    const auto config = testing::random_alert_config(rng);
    const auto steps = testing::random_alert_steps(rng, 50, 5);
    const auto expected = testing::rescan_oracle(steps, config);
    const auto actual = testing::replay_engine(steps, config);
    ASSERT_EQ(actual.size(), expected.size());
    for (std::size_t j = 0; j < steps.size(); ++j) {
      ASSERT_EQ(actual[j], expected[j]) << "sequence " << i << " step " << j << "\n  engine: "
                                        << testing::describe(actual[j])
                                        << "\n  oracle: " << testing::describe(expected[j]);
      raised += actual[j].raised.size();
      cleared += actual[j].cleared.size();
    }
    // Replaying is deterministic.
    EXPECT_EQ(testing::replay_engine(steps, config), actual);
  }
  EXPECT_GT(raised, 50u);
  EXPECT_GT(cleared, 20u);
}

}  // namespace
}  // namespace tutorhub

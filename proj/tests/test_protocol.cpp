#include <gtest/gtest.h>

#include <map>

#include <json.hpp>

#include "support/oracles.hpp"
#include "tutorhub/error.hpp"
#include "tutorhub/protocol.hpp"

namespace tutorhub {
namespace {

Envelope make(msg::Payload payload, std::uint64_t seq = 1) {
  Envelope e;
  e.seq = seq;
  e.ts = 0;
  e.session = SessionId{"sess"};
  e.sender = PeerId{"tutor"};
  e.payload = std::move(payload);
  return e;
}

ErrorCode decode_error(std::string_view frame) {
  try {
    decode(frame);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decoded: " << frame;
  return ErrorCode::InvalidArgument;
}

TEST(Protocol, HeartbeatCanonicalFrame) {
  const auto e = make(msg::Heartbeat{});
  const auto frame = encode(e);
  EXPECT_EQ(frame,
            R"({"v":1,"seq":1,"ts":0,"session":"sess","sender":"tutor","type":"Heartbeat","payload":{}})");
  EXPECT_EQ(decode(frame), e);
}

TEST(Protocol, HintChatRoundTripsByteIdentically) {
  const auto e = make(msg::Chat{PeerId{"tutor"}, PeerId{"s1"},
                                "To solve for k, first try isolating k on one side of the equation."});
  const auto frame = encode(e);
  EXPECT_EQ(decode(frame), e);
  EXPECT_EQ(encode(decode(frame)), frame);
}

TEST(Protocol, EmptyChatIsInvalid) {
  const auto e = make(msg::Chat{PeerId{"tutor"}, PeerId{"s1"}, ""});
  try {
    encode(e);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::InvalidEnvelope);
  }
}

TEST(Protocol, ChatLengthLimitCountsCodePoints) {
  std::string text;
  for (int i = 0; i < 2000; ++i) text += "\xE6\xBC\xA2";
  EXPECT_NO_THROW(encode(make(msg::Chat{PeerId{"a"}, PeerId{"b"}, text})));
  text += "x";
  EXPECT_THROW(encode(make(msg::Chat{PeerId{"a"}, PeerId{"b"}, text})), Error);
}

TEST(Protocol, VersionTwoIsRejected) {
  auto j = nlohmann::json::parse(encode(make(msg::Heartbeat{})));
  j["v"] = 2;
  EXPECT_EQ(decode_error(j.dump()), ErrorCode::VersionMismatch);
}

TEST(Protocol, TypedErrors) {
  EXPECT_EQ(decode_error("not json"), ErrorCode::MalformedFrame);
  EXPECT_EQ(decode_error("[1,2]"), ErrorCode::MalformedFrame);
  EXPECT_EQ(decode_error(""), ErrorCode::MalformedFrame);
  auto j = nlohmann::json::parse(encode(make(msg::Heartbeat{})));
  j["type"] = "Teleport";
  EXPECT_EQ(decode_error(j.dump()), ErrorCode::UnknownKind);
  // Missing or mistyped fields are structural; violated invariants are not.
  j["type"] = "Chat";
  EXPECT_EQ(decode_error(j.dump()), ErrorCode::MalformedFrame);
  j["payload"] = {{"from", "a"}, {"to", "b"}, {"text", ""}};
  EXPECT_EQ(decode_error(j.dump()), ErrorCode::InvalidEnvelope);
  j = nlohmann::json::parse(encode(make(msg::Heartbeat{})));
  j["seq"] = 0;
  EXPECT_EQ(decode_error(j.dump()), ErrorCode::InvalidEnvelope);
  j["seq"] = "1";
  EXPECT_EQ(decode_error(j.dump()), ErrorCode::MalformedFrame);
}

TEST(Protocol, InvariantsEnforced) {
  msg::Telemetry t;
  t.event.student = PeerId{"s"};
  t.event.kind = TelemetryKind::MouseClick;
  t.event.correct = true;
  EXPECT_THROW(encode(make(t)), Error);

  msg::RosterUpdate r;
  r.roster = {{PeerId{"a"}, "A", Role::Tutor, PresenceStatus::Connected},
              {PeerId{"b"}, "B", Role::Tutor, PresenceStatus::Connected}};
  EXPECT_THROW(encode(make(r)), Error);

  msg::Alert a;
  a.alert.student = PeerId{"s"};
  a.alert.kind = AlertKind::RepeatedIncorrect;
  EXPECT_THROW(encode(make(a)), Error);

  auto cmd = compose_command(PeerId{"s"}, "hello", true, false);
  cmd.speech_text.clear();
  EXPECT_THROW(encode(make(cmd)), Error);

  EXPECT_THROW(encode(make(msg::Offer{PeerId{}, "sdp"})), Error);
  EXPECT_THROW(encode(make(msg::Join{"\xC3", Role::Student})), Error);
}

TEST(Protocol, RoundTripEveryKind) {
  testing::Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto kind = static_cast<MessageKind>(i % kMessageKindCount);
    const auto e = testing::random_envelope(rng, kind);
    const auto frame = encode(e);
    const auto back = decode(frame);
    ASSERT_EQ(back, e) << frame;
    ASSERT_EQ(encode(back), frame);
    EXPECT_EQ(back.kind(), kind);
  }
}

TEST(Protocol, FuzzedFramesYieldTypedErrors) {
  testing::Rng rng(2);
  std::map<ErrorCode, int> seen;
  int accepted = 0;
  for (int i = 0; i < 3000; ++i) {
    const auto kind = static_cast<MessageKind>(i % kMessageKindCount);
    const auto frame = testing::fuzz_frame(rng, encode(testing::random_envelope(rng, kind)));
    try {
      const auto e = decode(frame);
      EXPECT_NO_THROW(validate(e));
      EXPECT_EQ(decode(encode(e)), e);
      ++accepted;
    } catch (const Error& err) {
      ++seen[err.code()];
      EXPECT_TRUE(err.code() == ErrorCode::MalformedFrame ||
                  err.code() == ErrorCode::UnknownKind ||
                  err.code() == ErrorCode::VersionMismatch ||
                  err.code() == ErrorCode::InvalidEnvelope)
          << err.what();
    }
  }
  EXPECT_GT(seen[ErrorCode::MalformedFrame], 0);
  EXPECT_GT(seen[ErrorCode::UnknownKind], 0);
  EXPECT_GT(seen[ErrorCode::VersionMismatch], 0);
  EXPECT_GT(seen[ErrorCode::InvalidEnvelope], 0);
  EXPECT_GT(accepted, 0);
}

TEST(Protocol, PayloadCodec) {
  testing::Rng rng(4);
  for (std::size_t k = 0; k < kMessageKindCount; ++k) {
    const auto kind = static_cast<MessageKind>(k);
    const auto e = testing::random_envelope(rng, kind);
    EXPECT_EQ(decode_payload(kind, encode_payload(e.payload)), e.payload);
  }
}

TEST(Protocol, SequenceDiscipline) {
  SequenceValidator v;
  const PeerId a{"a"}, b{"b"};
  v.accept(a, 1);
  v.accept(b, 1);
  v.accept(a, 2);
  for (std::uint64_t bad : {2u, 4u, 0u}) {
    try {
      v.accept(a, bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::SequenceViolation);
    }
  }
  v.accept(a, 3);

  SequenceStamper s;
  EXPECT_EQ(s.next(a), 1u);
  EXPECT_EQ(s.next(a), 2u);
  EXPECT_EQ(s.next(b), 1u);
}

TEST(Protocol, KindNames) {
  for (std::size_t k = 0; k < kMessageKindCount; ++k) {
    const auto kind = static_cast<MessageKind>(k);
    EXPECT_EQ(parse_message_kind(to_string(kind)), kind);
  }
  EXPECT_FALSE(parse_message_kind("heartbeat"));
}

TEST(Protocol, Utf8Length) {
  EXPECT_EQ(utf8_length(""), 0u);
  EXPECT_EQ(utf8_length("abc"), 3u);
  EXPECT_EQ(utf8_length("\xC3\xA9\xF0\x9F\x98\x80"), 2u);
}

}  // namespace
}  // namespace tutorhub

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "tutorhub/config.hpp"
#include "tutorhub/error.hpp"

namespace tutorhub {
namespace {

namespace fs = std::filesystem;

class ConfigFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("tutorhub-cfg-" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

TEST(Config, ApplySetting) {
  GatewayConfig c;
  apply_setting(c, "port", "9001");
  apply_setting(c, "inactivity_secs", "60");
  apply_setting(c, "stale_secs", "30");
  apply_setting(c, "ice_server", "stun:stun.example.org:3478");
  apply_setting(c, "simulated_clock", "yes");
  apply_setting(c, "speech_rate", "1.25");
  EXPECT_EQ(c.port, 9001);
  EXPECT_EQ(c.coordinator.alerts.inactivity_secs, 60);
  EXPECT_EQ(c.coordinator.presence.stale_ms, 30'000);
  EXPECT_EQ(c.coordinator.ice_servers.size(), 1u);
  EXPECT_TRUE(c.simulated_clock);
  EXPECT_DOUBLE_EQ(c.coordinator.speech_rate, 1.25);
  EXPECT_NO_THROW(c.validate());

  for (auto [k, v] : {std::pair{"port", "80x"}, {"nonsense", "1"}, {"simulated_clock", "maybe"},
                      {"speech_rate", "fast"}, {"tier.high", "1280@720"}}) {
    try {
      apply_setting(c, k, v);
      ADD_FAILURE() << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid) << k;
    }
  }
}

TEST(Config, ValidateRejectsBadValues) {
  GatewayConfig c;
  c.port = 70000;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  apply_setting(c, "stale_secs", "100");
  EXPECT_THROW(c.validate(), Error);
  c = {};
  apply_setting(c, "speech_rate", "0");
  EXPECT_THROW(c.validate(), Error);
  c = {};
  apply_setting(c, "tier.low", "320x240@2000");
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, TierSpec) {
  const auto high = parse_tier_spec(TierName::High, "1280x720@1500");
  EXPECT_EQ(high, (QualityTier{TierName::High, 1280, 720, 1500, 0}));
  const auto frozen = parse_tier_spec(TierName::Frozen, "160x120@20/5000");
  EXPECT_EQ(frozen.frame_interval_ms, 5000);
  EXPECT_THROW(parse_tier_spec(TierName::Mid, "640x480"), Error);
  EXPECT_THROW(parse_tier_spec(TierName::Mid, "640@480x1"), Error);
}

TEST_F(ConfigFiles, LoadConfigWithRelativeLexicon) {
  write("words.txt",
        "# custom words\ngreeting = howdy\ngreeting = good evening\nprompt = Show your work.\n");
  const auto path = write("gateway.conf",
                          "port = 8123  # trailing comment\n\n"
                          "lexicon_file = words.txt\nincorrect_threshold = 4\n");
  GatewayConfig c;
  load_config_file(c, path);
  EXPECT_EQ(c.port, 8123);
  EXPECT_EQ(c.coordinator.alerts.incorrect_threshold, 4);
  EXPECT_EQ(c.coordinator.lexicon.greeting,
            (std::vector<std::string>{"howdy", "good evening"}));
  // Categories absent from the file keep their built-in lists.
  EXPECT_EQ(c.coordinator.lexicon.corrective, Lexicon{}.corrective);
  EXPECT_EQ(c.coordinator.canned_prompts, std::vector<std::string>{"Show your work."});
}

TEST_F(ConfigFiles, Errors) {
  GatewayConfig c;
  EXPECT_THROW(load_config_file(c, dir_ / "missing.conf"), Error);
  EXPECT_THROW(load_config_file(c, write("a.conf", "port 80\n")), Error);
  CoordinatorConfig co;
  EXPECT_THROW(load_lexicon_file(co, write("b.txt", "insult = x\n")), Error);
}

}  // namespace
}  // namespace tutorhub

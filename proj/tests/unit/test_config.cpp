#include <gtest/gtest.h>

#include "wenlex/config.hpp"

using namespace wenlex;

TEST(Config, DefaultsValidate) {
  Config c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.train.mode, TrainMode::PostHoc);
  EXPECT_EQ(c.train.plaus, Plausibility::Mmd);
  EXPECT_FALSE(c.train.recons);
  EXPECT_EQ(c.train.tap, "block2");
  EXPECT_EQ(c.train.critic_ratio, 5);
  EXPECT_EQ(c.train.frozen_period, 1000);
  EXPECT_EQ(c.db.n, 5u);
}

TEST(Config, OverlayKeepsAbsentKeys) {
  Config base;
  base.train.epochs = 7;
  const auto c = parse_config("[train]\nmode = \"in-model\"\nrecons = true\nlr = 1e-3\n", base);
  EXPECT_EQ(c.train.mode, TrainMode::InModel);
  EXPECT_TRUE(c.train.recons);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.data.train, 800u);
}

TEST(Config, RoundTripIsExact) {
  Config c;
  c.data.seed = 99;
  c.train.plaus = Plausibility::Adversarial;
  c.train.nle_clf = true;
  c.train.gp_lambda = 2.5;
  c.train.tap = "gap";
  c.db.grammar = "layman";
  c.eval.k = 4;
  const auto text = config_to_toml(c);
  const auto back = parse_config(text);
  EXPECT_EQ(config_to_toml(back), text);
  EXPECT_EQ(back.train.tap, "gap");
  EXPECT_EQ(back.train.plaus, Plausibility::Adversarial);
  EXPECT_EQ(back.data.seed, 99u);
}

TEST(Config, RejectsUnknownAndInvalid) {
  EXPECT_THROW(parse_config("[train]\nepoch = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nmode = \"sideways\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\ntap = \"block9\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepochs = \"ten\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\ntrain = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[db]\ngrammar = \"pirate\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[train\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/wenlex.toml"), ConfigError);
}

TEST(Config, SetAllSeedsLeavesCodecAlone) {
  Config c;
  set_all_seeds(c, 42);
  EXPECT_EQ(c.data.seed, 42u);
  EXPECT_EQ(c.pretrain.seed, 42u);
  EXPECT_EQ(c.db.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.eval.seed, 42u);
  EXPECT_EQ(c.codec.seed, 0u);
}

TEST(Config, ModeAndSwitchParsing) {
  EXPECT_EQ(parse_mode("post-hoc"), TrainMode::PostHoc);
  EXPECT_EQ(parse_mode("in_model"), TrainMode::InModel);
  EXPECT_EQ(parse_plaus("adv"), Plausibility::Adversarial);
  EXPECT_TRUE(parse_switch("on"));
  EXPECT_FALSE(parse_switch("off"));
  EXPECT_THROW(parse_switch("maybe"), ConfigError);
}

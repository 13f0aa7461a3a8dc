#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "distortbench/config.hpp"

using namespace distortbench;

namespace {

std::string usage_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const UsageError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  const RunConfig c = resolve_config_text("");
  EXPECT_EQ(c.max_iter, 3500u);
  EXPECT_EQ(c.patch_size, 8u);
  EXPECT_EQ(c.mode, AttackMode::Untargeted);
  EXPECT_EQ(c.severities, (std::vector<double>{1, 2, 3, 4, 5}));
  EXPECT_EQ(c.agent_config.replay_capacity, 10000u);
  EXPECT_EQ(c.agent_config.batch_size, 64u);
  EXPECT_EQ(c.agent_config.target_sync_every, 500u);
  EXPECT_EQ(c.agent_config.gamma, 0.99);
  EXPECT_EQ(c.agent_config.learning_rate, 1e-3);
  EXPECT_EQ(config_hash(c), config_hash(RunConfig{}));
}

TEST(Config, MissingFileIsUsageError) {
  EXPECT_THROW(resolve_config(std::filesystem::path("/nonexistent/dir/run.cfg")), UsageError);
  EXPECT_EQ(resolve_config(std::nullopt).max_iter, 3500u);
}

TEST(Config, OverridesChangeFieldAndHash) {
  const RunConfig base = resolve_config_text("");
  const RunConfig c = resolve_config_text("", {"patch_size=4"});
  EXPECT_EQ(c.patch_size, 4u);
  EXPECT_NE(config_hash(c), config_hash(base));
  const RunConfig file_then_override = resolve_config_text("patch_size = 2\nseed = 9\n", {"patch_size=4"});
  EXPECT_EQ(file_then_override.patch_size, 4u);
  EXPECT_EQ(file_then_override.seed, 9u);
}

TEST(Config, DuplicateAndUnknownKeysNameTheKey) {
  EXPECT_NE(usage_message([] { resolve_config_text("seed = 1\nseed = 2\n"); }).find("'seed'"), std::string::npos);
  EXPECT_NE(usage_message([] { resolve_config_text("colour = red\n"); }).find("'colour'"), std::string::npos);
  EXPECT_NE(usage_message([] { resolve_config_text("", {"bogus=1"}); }).find("'bogus'"), std::string::npos);
}

TEST(Config, TypeMismatchNamesTheKey) {
  EXPECT_NE(usage_message([] { resolve_config_text("max_iter = many\n"); }).find("max_iter"), std::string::npos);
  EXPECT_NE(usage_message([] { resolve_config_text("noise_sigma = 0.1x\n"); }).find("noise_sigma"), std::string::npos);
  EXPECT_THROW(resolve_config_text("skip_misclassified = maybe\n"), UsageError);
  EXPECT_THROW(resolve_config_text("filters = sharpen\n"), UsageError);
  EXPECT_THROW(resolve_config_text("filters = gaussian_noise,gaussian_noise\n"), UsageError);
  EXPECT_THROW(resolve_config_text("image_shape = 3x32\n"), UsageError);
  EXPECT_THROW(resolve_config_text("just words\n"), UsageError);
}

TEST(Config, SemanticValidation) {
  EXPECT_THROW(resolve_config_text("mode = targeted\n"), UsageError);
  EXPECT_NO_THROW(resolve_config_text("mode = targeted\ntarget_class = 3\n"));
  EXPECT_THROW(resolve_config_text("severities = 2,3\n"), UsageError);
  EXPECT_THROW(resolve_config_text("severities = 1,3,2\n"), UsageError);
  EXPECT_THROW(resolve_config_text("thresholds = 0.5,1.0\n"), UsageError);
  EXPECT_THROW(resolve_config_text("patch_size = 0\n"), UsageError);
  EXPECT_THROW(resolve_config_text("filters =\n"), UsageError);
  EXPECT_THROW(resolve_config_text("reward_clip = -1\n"), UsageError);
  EXPECT_EQ(resolve_config_text("reward_clip = 0.5\n").agent_config.reward_clip, 0.5);
}

TEST(Config, CommentsAndWhitespaceAreIgnored) {
  const RunConfig c = resolve_config_text("# header\n\n  seed=7   # trailing\n filters = brightness , dead_pixel\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.filters, (std::vector<FilterId>{FilterId::Brightness, FilterId::DeadPixel}));
}

TEST(Config, DumpRoundTripsThroughParser) {
  const RunConfig c = resolve_config_text(
      "mode = targeted\ntarget_class = 2\nthresholds = 0.3,0.6\nfilters = gaussian_blur,brightness\n"
      "noise_sigma = 0.0123456789\nimage_shape = 1x28x28\nseverities = 1,1.5,4\nvictim = toy:w.dbtoy\n");
  const std::string text = dump_config(c);
  const RunConfig back = resolve_config_text(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.filter_params.noise_sigma, 0.0123456789);
  EXPECT_EQ(back.image_shape, (Shape{1, 28, 28}));
}

TEST(Config, HashIsHexOfFnvOverDump) {
  const RunConfig c;
  EXPECT_EQ(config_hash(c), fnv1a64(dump_config(c)));
  EXPECT_EQ(hex64(0x0123456789abcdefULL), "0123456789abcdef");
  EXPECT_EQ(hex64(0), "0000000000000000");
}

#include <gtest/gtest.h>

#include <cmath>

#include "callig/augment.hpp"
#include "test_util.hpp"

using namespace callig;

namespace {

AugmentConfig zero_ranges() {
  AugmentConfig c;
  c.sigma_translation = c.sigma_rotation = 0.0;
  c.shift_max = 0;
  c.brightness_range = c.saturation_range = c.hue_range = 0.0;
  return c;
}

Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Image img(c, h, w);
  for (auto& v : img.data) v = rng.uniform(0.0, 1.0);
  return img;
}

Image shifted(const Image& img, int dy, int dx) {
  ImageJitter j;
  j.shift_y = dy;
  j.shift_x = dx;
  return apply_image_jitter(img, j);
}

}  // namespace

TEST(AugmentPose, ZeroSigmaIsIdentity) {
  Rng rng(1);
  const PoseState p = PoseState::make({0.3, 0.7, 0.01}, quat_from_axis_angle({1, 2, 3}, 0.4));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(augment_pose(p, zero_ranges(), rng), p);
  AugmentConfig off;
  off.enable_pose = false;
  EXPECT_EQ(augment_pose(p, off, rng), p);
}

TEST(AugmentPose, TranslationNoiseIsUnbiased) {
  AugmentConfig cfg;
  cfg.sigma_translation = 0.01;
  Rng rng(2);
  const PoseState p = PoseState::make({0.5, 0.5, 0.05}, {});
  const int n = 100000;
  std::array<double, 3> mean{}, var{};
  for (int i = 0; i < n; ++i) {
    const PoseState q = augment_pose(p, cfg, rng);
    for (int k = 0; k < 3; ++k) {
      const double d = q.translation[k] - p.translation[k];
      mean[k] += d;
      var[k] += d * d;
    }
  }
  const double bound = 4.0 * cfg.sigma_translation / std::sqrt(static_cast<double>(n));
  for (int k = 0; k < 3; ++k) {
    EXPECT_LT(std::fabs(mean[k] / n), bound) << k;
    EXPECT_NEAR(var[k] / n, cfg.sigma_translation * cfg.sigma_translation, 1e-5) << k;
  }
}

TEST(AugmentPose, RotationStaysUnitCanonicalAndSmall) {
  AugmentConfig cfg;
  Rng rng(3);
  double total = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const PoseState p = PoseState::make({0.5, 0.5, 0.0}, {rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    const PoseState q = augment_pose(p, cfg, rng);
    ASSERT_NEAR(q.rotation.norm(), 1.0, 1e-6);
    ASSERT_GE(q.rotation.w, 0.0);
    total += quat_angular_distance(p.rotation, q.rotation);
  }
  // E|N(0, s^2)| = s sqrt(2/pi)
  EXPECT_NEAR(total / n, cfg.sigma_rotation * std::sqrt(2.0 / std::numbers::pi), 5e-4);
}

TEST(AugmentPose, PenFlagFollowsPerturbedHeight) {
  AugmentConfig cfg;
  cfg.sigma_translation = 0.02;
  Rng rng(4);
  const PoseState p = PoseState::make({0.5, 0.5, 0.02}, {});
  bool saw_down = false, saw_up = false;
  for (int i = 0; i < 200; ++i) {
    const PoseState q = augment_pose(p, cfg, rng);
    EXPECT_EQ(q.pen_down, q.translation[2] < kDefaultContactThreshold);
    saw_down |= q.pen_down;
    saw_up |= !q.pen_down;
  }
  EXPECT_TRUE(saw_down && saw_up);
}

TEST(AugmentImage, ZeroRangesAreIdentity) {
  Rng rng(5);
  const Image img = random_image(3, 12, 10, rng);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment_image(img, zero_ranges(), rng), img);
}

TEST(AugmentImage, ShiftMovesContentAndZeroPads) {
  Rng rng(6);
  const Image img = random_image(3, 8, 8, rng);
  const Image s = shifted(img, 2, -1);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const int sy = static_cast<int>(y) - 2, sx = static_cast<int>(x) + 1;
        const double expected = (sy >= 0 && sx < 8) ? img.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) : 0.0;
        EXPECT_EQ(s.at(c, y, x), expected);
      }
}

TEST(AugmentImage, ShiftAndBackRestoresInterior) {
  Rng rng(7);
  const Image img = random_image(3, 16, 12, rng);
  const int k = 3, l = 2;
  const Image twice = shifted(shifted(img, k, l), -k, -l);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        const bool interior = y < 16u - k && x < 12u - l;
        EXPECT_EQ(twice.at(c, y, x), interior ? img.at(c, y, x) : 0.0);
      }
  // Central crop of size (H-2k) x (W-2l) is unchanged.
  for (std::size_t y = k; y < 16u - k; ++y)
    for (std::size_t x = l; x < 12u - l; ++x) EXPECT_EQ(twice.at(1, y, x), img.at(1, y, x));
}

TEST(AugmentImage, GrayscaleIsFixedPointOfHueAndSaturation) {
  Rng rng(8);
  Image img(3, 6, 6);
  for (std::size_t p = 0; p < img.plane(); ++p) {
    const double v = rng.uniform(0.0, 1.0);
    for (std::size_t c = 0; c < 3; ++c) img.data[c * img.plane() + p] = v;
  }
  for (int i = 0; i < 50; ++i) {
    ImageJitter j;
    j.hue = rng.uniform(-0.5, 0.5);
    j.saturation = rng.uniform(0.5, 1.5);
    const Image out = apply_image_jitter(img, j);
    for (std::size_t k = 0; k < img.data.size(); ++k) ASSERT_NEAR(out.data[k], img.data[k], 1e-6);
  }
}

TEST(AugmentImage, HsvRoundTripAndHueRotation) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform(0, 1), g = rng.uniform(0, 1), b = rng.uniform(0, 1);
    const auto hsv = detail::rgb_to_hsv(r, g, b);
    const auto rgb = detail::hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
    ASSERT_NEAR(rgb[0], r, 1e-12);
    ASSERT_NEAR(rgb[1], g, 1e-12);
    ASSERT_NEAR(rgb[2], b, 1e-12);
  }
  // A third of a turn sends red to green.
  Image red(3, 1, 1);
  red.data = {1.0, 0.0, 0.0};
  ImageJitter j;
  j.hue = 1.0 / 3.0;
  const Image green = apply_image_jitter(red, j);
  EXPECT_NEAR(green.data[0], 0.0, 1e-12);
  EXPECT_NEAR(green.data[1], 1.0, 1e-12);
  EXPECT_NEAR(green.data[2], 0.0, 1e-12);
}

TEST(AugmentImage, BrightnessIsAdditiveAndClamped) {
  Image img(1, 1, 3);
  img.data = {0.0, 0.5, 0.95};
  ImageJitter j;
  j.brightness = 0.1;
  const Image out = apply_image_jitter(img, j);
  EXPECT_DOUBLE_EQ(out.data[0], 0.1);
  EXPECT_DOUBLE_EQ(out.data[1], 0.6);
  EXPECT_DOUBLE_EQ(out.data[2], 1.0);
}

TEST(AugmentImage, OutputInRangeWithShapeKept) {
  AugmentConfig cfg;
  cfg.brightness_range = 0.5;
  cfg.saturation_range = 0.9;
  cfg.hue_range = 0.5;
  Rng rng(10);
  for (int i = 0; i < 50; ++i) {
    const Image img = random_image(3, 20, 24, rng);
    const Image out = augment_image(img, cfg, rng);
    ASSERT_EQ(out.channels, img.channels);
    ASSERT_EQ(out.height, img.height);
    ASSERT_EQ(out.width, img.width);
    for (double v : out.data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(AugmentImage, JitterDrawRespectsBoundsAndFlags) {
  AugmentConfig cfg;
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const ImageJitter j = sample_image_jitter(cfg, rng);
    ASSERT_LE(std::abs(j.shift_y), cfg.shift_max);
    ASSERT_LE(std::abs(j.shift_x), cfg.shift_max);
    ASSERT_LE(std::fabs(j.brightness), cfg.brightness_range);
    ASSERT_LE(std::fabs(j.saturation - 1.0), cfg.saturation_range);
    ASSERT_LE(std::fabs(j.hue), cfg.hue_range);
  }
  cfg.set_image_enabled(false);
  EXPECT_FALSE(cfg.image_enabled());
  const ImageJitter none = sample_image_jitter(cfg, rng);
  EXPECT_EQ(none.shift_x, 0);
  EXPECT_EQ(none.shift_y, 0);
  EXPECT_EQ(none.brightness, 0.0);
  EXPECT_EQ(none.saturation, 1.0);
  EXPECT_EQ(none.hue, 0.0);
}

TEST(Augment, FixedSeedIsBitReproducible) {
  AugmentConfig cfg;
  Rng data(12);
  const Image img = random_image(3, 16, 16, data);
  const PoseState pose = PoseState::make({0.4, 0.6, 0.0}, quat_from_axis_angle({0, 1, 0}, 0.3));
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed, "augment");
    std::vector<double> out;
    for (int i = 0; i < 8; ++i) {
      const Image a = augment_image(img, cfg, rng);
      const PoseState p = augment_pose(pose, cfg, rng);
      out.insert(out.end(), a.data.begin(), a.data.end());
      const auto arr = p.to_array();
      out.insert(out.end(), arr.begin(), arr.end());
    }
    return out;
  };
  EXPECT_EQ(run(99), run(99));
  EXPECT_NE(run(99), run(100));
}

TEST(AugmentConfig, ValidationRejectsBadMagnitudes) {
  AugmentConfig cfg;
  EXPECT_NO_THROW(cfg.validate(64, 64));
  cfg.shift_max = 16;
  EXPECT_THROW(cfg.validate(64, 64), ConfigError);
  cfg = AugmentConfig{};
  cfg.sigma_translation = -1.0;
  EXPECT_THROW(cfg.validate(64, 64), ConfigError);
  cfg = AugmentConfig{};
  cfg.saturation_range = 1.0;
  EXPECT_THROW(cfg.validate(64, 64), ConfigError);
}

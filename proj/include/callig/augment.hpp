#pragma once

// Training-time augmentation: Gaussian pose noise, and integer shift plus
// brightness / saturation / hue jitter for images.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "callig/errors.hpp"
#include "callig/image.hpp"
#include "callig/pose.hpp"
#include "callig/rng.hpp"

namespace callig {

struct AugmentConfig {
  double sigma_translation = 0.005;  // workspace units
  double sigma_rotation = 0.02;      // radians
  int shift_max = 4;                 // pixels
  double brightness_range = 0.1;     // additive, +-range
  double saturation_range = 0.2;     // multiplicative, 1 +- range
  double hue_range = 0.05;           // turns, +-range
  bool enable_pose = true;
  bool enable_shift = true;
  bool enable_brightness = true;
  bool enable_saturation = true;
  bool enable_hue = true;
  bool noisy_targets = false;  // also perturb regression target poses

  bool image_enabled() const { return enable_shift || enable_brightness || enable_saturation || enable_hue; }
  void set_image_enabled(bool on) { enable_shift = enable_brightness = enable_saturation = enable_hue = on; }

  void validate(std::size_t image_height, std::size_t image_width) const {
    if (sigma_translation < 0.0 || sigma_rotation < 0.0 || shift_max < 0 || brightness_range < 0.0 ||
        saturation_range < 0.0 || hue_range < 0.0) {
      throw ConfigError("augment: magnitudes must be nonnegative");
    }
    if (4 * static_cast<std::size_t>(shift_max) >= std::min(image_height, image_width)) {
      throw ConfigError("augment: shift_max must be below a quarter of the image extent");
    }
    if (saturation_range >= 1.0) throw ConfigError("augment: saturation_range must be below 1");
  }
};

// Adds N(0, sigma_t^2 I) to the translation and composes the rotation with a
// rotation of angle |N(0, sigma_r^2)| about a uniformly random axis.
inline PoseState augment_pose(const PoseState& pose, const AugmentConfig& cfg, Rng& rng,
                              double contact_threshold = kDefaultContactThreshold) {
  if (!cfg.enable_pose) return pose;
  PoseState out = pose;
  for (auto& v : out.translation) v += cfg.sigma_translation * rng.normal();
  const double angle = std::fabs(cfg.sigma_rotation * rng.normal());
  Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  if (angle > 0.0) out.rotation = quat_normalize(quat_from_axis_angle(axis, angle) * pose.rotation);
  out.pen_down = out.translation[2] < contact_threshold;
  return out;
}

// One draw of image jitter, shared by every image of a training pair.
struct ImageJitter {
  int shift_y = 0, shift_x = 0;
  double brightness = 0.0;
  double saturation = 1.0;
  double hue = 0.0;
};

inline ImageJitter sample_image_jitter(const AugmentConfig& cfg, Rng& rng) {
  ImageJitter j;
  const int s = cfg.enable_shift ? cfg.shift_max : 0;
  j.shift_y = static_cast<int>(rng.uniform_int(-s, s));
  j.shift_x = static_cast<int>(rng.uniform_int(-s, s));
  const double b = rng.uniform(-1.0, 1.0), sat = rng.uniform(-1.0, 1.0), hue = rng.uniform(-1.0, 1.0);
  if (cfg.enable_brightness) j.brightness = b * cfg.brightness_range;
  if (cfg.enable_saturation) j.saturation = 1.0 + sat * cfg.saturation_range;
  if (cfg.enable_hue) j.hue = hue * cfg.hue_range;
  return j;
}

namespace detail {

inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  double h = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      h = (g - b) / delta;
      if (h < 0.0) h += 6.0;
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    h /= 6.0;
  }
  const double s = mx > 0.0 ? delta / mx : 0.0;
  return {h, s, mx};
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

}  // namespace detail

inline Image apply_image_jitter(const Image& img, const ImageJitter& j) {
  Image out = img;
  if (j.shift_x != 0 || j.shift_y != 0) {
    std::fill(out.data.begin(), out.data.end(), 0.0);
    const auto h = static_cast<int>(img.height), w = static_cast<int>(img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y - j.shift_y, sx = x - j.shift_x;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                img.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
        }
  }
  if (j.brightness != 0.0) {
    for (auto& v : out.data) v = std::clamp(v + j.brightness, 0.0, 1.0);
  }
  if (out.channels == 3 && (j.saturation != 1.0 || j.hue != 0.0)) {
    const std::size_t plane = out.plane();
    for (std::size_t p = 0; p < plane; ++p) {
      auto hsv = detail::rgb_to_hsv(out.data[p], out.data[plane + p], out.data[2 * plane + p]);
      hsv[0] += j.hue;
      hsv[1] = std::clamp(hsv[1] * j.saturation, 0.0, 1.0);
      const auto rgb = detail::hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
      for (std::size_t c = 0; c < 3; ++c) out.data[c * plane + p] = std::clamp(rgb[c], 0.0, 1.0);
    }
  }
  return out;
}

inline Image augment_image(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  return apply_image_jitter(img, sample_image_jitter(cfg, rng));
}

}  // namespace callig

#pragma once

// Synthetic calligraphy expert: multi-stroke character templates, ink
// deposition on a paper canvas, and composite camera observations.
//
// Coordinates: the paper plane is [0,1]^2 with x to the right and y downward;
// pixel (row, col) has its center at ((col + 0.5) / W, (row + 0.5) / H).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "callig/errors.hpp"
#include "callig/image.hpp"
#include "callig/pose.hpp"
#include "callig/rng.hpp"

namespace callig {

struct SimConfig {
  std::size_t image_channels = 3;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  double footprint_radius_px = 1.5;
  double travel_height = kDefaultTravelHeight;
  double contact_threshold = kDefaultContactThreshold;
  std::size_t lift_steps = 3;
  std::size_t descend_steps = 3;
  double travel_step = 0.05;  // max planar distance per pen-up travel step
  std::size_t hold_steps = 8;  // rest at the final pose
  double marker_length = 0.25;  // pen-axis marker length at 90 degrees tilt
  double marker_half_width_px = 0.75;
  double cue_radius_px = 2.0;
  double style_jitter = 0.01;

  void validate() const {
    if (image_channels != 1 && image_channels != 3) throw ConfigError("sim: image_channels must be 1 or 3");
    if (image_height < 4 || image_width < 4) throw ConfigError("sim: image extents must be at least 4");
    if (!(footprint_radius_px > 0.0)) throw ConfigError("sim: footprint_radius_px must be positive");
    if (!(travel_height > contact_threshold) || !(contact_threshold > 0.0)) {
      throw ConfigError("sim: need 0 < contact_threshold < travel_height");
    }
    if (lift_steps < 1 || descend_steps < 1) throw ConfigError("sim: lift/descend steps must be >= 1");
    if (!(travel_step > 0.0)) throw ConfigError("sim: travel_step must be positive");
    if (style_jitter < 0.0) throw ConfigError("sim: style_jitter must be >= 0");
  }
};

using Vec2 = std::array<double, 2>;

struct BezierSegment {
  std::array<Vec2, 4> control;

  static BezierSegment line(Vec2 a, Vec2 b) {
    return {{a, Vec2{a[0] + (b[0] - a[0]) / 3.0, a[1] + (b[1] - a[1]) / 3.0},
             Vec2{a[0] + 2.0 * (b[0] - a[0]) / 3.0, a[1] + 2.0 * (b[1] - a[1]) / 3.0}, b}};
  }

  // de Casteljau, so collinear control points give exactly collinear samples.
  Vec2 eval(double t) const {
    auto lerp = [t](Vec2 a, Vec2 b) { return Vec2{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}; };
    const Vec2 a = lerp(control[0], control[1]), b = lerp(control[1], control[2]), c = lerp(control[2], control[3]);
    const Vec2 d = lerp(a, b), e = lerp(b, c);
    return lerp(d, e);
  }
};

struct Stroke {
  std::vector<BezierSegment> segments;
  // Pen tilt from vertical (radians) at the start and end of the stroke,
  // interpolated along arc length, and the planar direction it leans toward.
  double tilt_start = 0.3;
  double tilt_end = 0.3;
  double tilt_azimuth = 0.75 * std::numbers::pi;
  std::size_t samples = 40;
};

struct CharacterTemplate {
  std::string id;
  std::vector<Stroke> strokes;

  void validate() const {
    if (strokes.empty()) throw ConfigError("template " + id + ": needs at least one stroke");
    for (const auto& s : strokes) {
      if (s.segments.empty()) throw ConfigError("template " + id + ": stroke without segments");
      if (s.samples < 2) throw ConfigError("template " + id + ": a stroke needs at least 2 samples");
      for (const auto& seg : s.segments)
        for (const auto& p : seg.control)
          if (!(p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0)) {
            throw ConfigError("template " + id + ": control point outside the unit square");
          }
    }
  }
};

// Pen orientation leaning by `tilt` toward planar direction `azimuth`.
inline Quaternion pen_orientation(double tilt, double azimuth) {
  return quat_normalize(quat_from_axis_angle({-std::sin(azimuth), std::cos(azimuth), 0.0}, tilt));
}

// Five characters of increasing stroke count: 一, 二, 川, 木, 永.
inline std::vector<CharacterTemplate> builtin_templates() {
  using B = BezierSegment;
  std::vector<CharacterTemplate> t;
  t.push_back({"line1", {Stroke{{B::line({0.2, 0.5}, {0.8, 0.5})}, 0.3, 0.4, 0.75 * std::numbers::pi, 52}}});
  t.push_back({"ni2",
               {Stroke{{B{{Vec2{0.3, 0.36}, Vec2{0.43, 0.34}, Vec2{0.57, 0.34}, Vec2{0.7, 0.35}}}}, 0.3, 0.35, 2.4, 40},
                Stroke{{B{{Vec2{0.18, 0.66}, Vec2{0.4, 0.63}, Vec2{0.6, 0.63}, Vec2{0.82, 0.65}}}}, 0.3, 0.45, 2.4, 48}}});
  t.push_back({"kawa3",
               {Stroke{{B{{Vec2{0.3, 0.2}, Vec2{0.31, 0.45}, Vec2{0.29, 0.65}, Vec2{0.2, 0.82}}}}, 0.35, 0.5, 2.0, 36},
                Stroke{{B::line({0.5, 0.26}, {0.5, 0.7})}, 0.3, 0.3, 2.0, 32},
                Stroke{{B{{Vec2{0.72, 0.18}, Vec2{0.72, 0.45}, Vec2{0.72, 0.7}, Vec2{0.73, 0.86}}}}, 0.3, 0.35, 2.0, 40}}});
  t.push_back({"ki4",
               {Stroke{{B{{Vec2{0.2, 0.42}, Vec2{0.4, 0.4}, Vec2{0.6, 0.4}, Vec2{0.8, 0.39}}}}, 0.3, 0.35, 2.4, 36},
                Stroke{{B::line({0.5, 0.14}, {0.5, 0.9})}, 0.3, 0.3, 2.0, 40},
                Stroke{{B{{Vec2{0.48, 0.44}, Vec2{0.42, 0.56}, Vec2{0.32, 0.66}, Vec2{0.18, 0.76}}}}, 0.35, 0.5, 2.0, 28},
                Stroke{{B{{Vec2{0.53, 0.44}, Vec2{0.6, 0.56}, Vec2{0.7, 0.66}, Vec2{0.84, 0.74}}}}, 0.35, 0.45, 2.6, 28}}});
  t.push_back({"ei5",
               {Stroke{{B::line({0.48, 0.08}, {0.54, 0.16})}, 0.35, 0.4, 2.4, 8},
                Stroke{{B::line({0.36, 0.26}, {0.55, 0.26}), B::line({0.55, 0.26}, {0.55, 0.86}),
                        B::line({0.55, 0.86}, {0.47, 0.8})},
                       0.3, 0.4, 2.2, 44},
                Stroke{{B::line({0.24, 0.42}, {0.42, 0.42}), B{{Vec2{0.42, 0.42}, Vec2{0.36, 0.56}, Vec2{0.28, 0.66}, Vec2{0.16, 0.74}}}},
                       0.3, 0.45, 2.2, 30},
                Stroke{{B::line({0.8, 0.34}, {0.62, 0.46})}, 0.3, 0.35, 2.6, 14},
                Stroke{{B{{Vec2{0.58, 0.46}, Vec2{0.66, 0.62}, Vec2{0.74, 0.74}, Vec2{0.88, 0.86}}}}, 0.35, 0.5, 2.6, 30}}});
  return t;
}

inline CharacterTemplate find_template(const std::string& id) {
  for (auto& t : builtin_templates())
    if (t.id == id) return t;
  throw ConfigError("unknown template '" + id + "'");
}

// ---------------------------------------------------------------------------
// Canvas and rendering

// Grayscale paper: 1 = white, 0 = full ink. Values stay on the 16-bit lattice.
struct Canvas {
  std::size_t height = 0, width = 0;
  std::vector<double> data;

  Canvas() = default;
  Canvas(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 1.0) {}

  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  friend bool operator==(const Canvas&, const Canvas&) = default;
};

namespace detail {

// Calls fn(row, col, coverage) for pixels touched by a disc of `radius` px
// centered at pixel coordinates (cx, cy). Coverage is the usual one-pixel
// linear ramp across the boundary.
template <typename F>
void for_each_disc_pixel(std::size_t h, std::size_t w, double cx, double cy, double radius, F fn) {
  if (!std::isfinite(cx) || !std::isfinite(cy)) return;
  const double reach = radius + 0.5;
  const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - reach - 0.5));
  const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + reach + 0.5));
  const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - reach - 0.5));
  const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + reach + 0.5));
  for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(y0, 0); y <= std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(h) - 1); ++y)
    for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(x0, 0); x <= std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(w) - 1); ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double coverage = std::clamp(reach - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
      if (coverage > 0.0) fn(static_cast<std::size_t>(y), static_cast<std::size_t>(x), coverage);
    }
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// Deposits ink for a pen-down pose; a lifted pen leaves the canvas unchanged.
inline Canvas stamp(Canvas canvas, const PoseState& pose, const SimConfig& cfg) {
  if (!pose.pen_down) return canvas;
  const double cx = pose.translation[0] * static_cast<double>(canvas.width);
  const double cy = pose.translation[1] * static_cast<double>(canvas.height);
  detail::for_each_disc_pixel(canvas.height, canvas.width, cx, cy, cfg.footprint_radius_px,
                              [&](std::size_t y, std::size_t x, double coverage) {
                                double& v = canvas.data[y * canvas.width + x];
                                v = quantize16(v - coverage);
                              });
  return canvas;
}

struct Observation {
  Image image;
  PoseState pose;
  friend bool operator==(const Observation&, const Observation&) = default;
};

// Composite camera frame. Channel 0 is the canvas, channel 1 a short marker
// from the pen tip along the projected pen axis, channel 2 a disc at the tip
// whose brightness grows with pen height. With a single channel the marker
// and cue are darkened into the canvas instead.
inline Observation render_observation(const Canvas& canvas, const PoseState& pose, const SimConfig& cfg) {
  const std::size_t h = cfg.image_height, w = cfg.image_width;
  if (canvas.height != h || canvas.width != w) throw ConfigError("render_observation: canvas/image shape mismatch");
  Image marker(1, h, w), cue(1, h, w);

  const double tx = pose.translation[0] * static_cast<double>(w);
  const double ty = pose.translation[1] * static_cast<double>(h);
  const Vec3 axis = rotate(pose.rotation, {0.0, 0.0, 1.0});
  const double ex = tx + axis[0] * cfg.marker_length * static_cast<double>(w);
  const double ey = ty + axis[1] * cfg.marker_length * static_cast<double>(h);
  if (std::isfinite(tx) && std::isfinite(ty)) {
    const double reach = cfg.marker_half_width_px + 0.5;
    const auto y0 = std::max(0.0, std::floor(std::min(ty, ey) - reach - 1.0));
    const auto y1 = std::min(static_cast<double>(h) - 1.0, std::ceil(std::max(ty, ey) + reach + 1.0));
    const auto x0 = std::max(0.0, std::floor(std::min(tx, ex) - reach - 1.0));
    const auto x1 = std::min(static_cast<double>(w) - 1.0, std::ceil(std::max(tx, ex) + reach + 1.0));
    for (double y = y0; y <= y1; y += 1.0)
      for (double x = x0; x <= x1; x += 1.0) {
        const double d = detail::segment_distance(x + 0.5, y + 0.5, tx, ty, ex, ey);
        const double v = std::clamp(reach - d, 0.0, 1.0);
        auto& m = marker.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        m = std::max(m, v);
      }
  }
  const double height_level = 0.25 + 0.75 * std::clamp(pose.translation[2] / cfg.travel_height, 0.0, 1.0);
  detail::for_each_disc_pixel(h, w, tx, ty, cfg.cue_radius_px, [&](std::size_t y, std::size_t x, double coverage) {
    cue.at(0, y, x) = coverage * height_level;
  });

  Image img(cfg.image_channels, h, w);
  if (cfg.image_channels == 3) {
    std::copy(canvas.data.begin(), canvas.data.end(), img.data.begin());
    std::copy(marker.data.begin(), marker.data.end(), img.data.begin() + static_cast<std::ptrdiff_t>(h * w));
    std::copy(cue.data.begin(), cue.data.end(), img.data.begin() + static_cast<std::ptrdiff_t>(2 * h * w));
  } else {
    for (std::size_t i = 0; i < h * w; ++i)
      img.data[i] = canvas.data[i] * (1.0 - 0.5 * marker.data[i]) * (1.0 - 0.5 * cue.data[i]);
  }
  quantize16(img);
  return {std::move(img), pose};
}

// ---------------------------------------------------------------------------
// Demonstrations

struct Demonstration {
  std::string template_id;
  std::uint64_t style_seed = 0;
  std::vector<Observation> observations;
  std::vector<std::uint8_t> pen_down;
  Canvas final_canvas;

  std::size_t size() const { return observations.size(); }
  PoseTrajectory poses() const {
    PoseTrajectory out;
    out.reserve(observations.size());
    for (const auto& o : observations) out.push_back(o.pose);
    return out;
  }
  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

namespace detail {

struct StrokeSample {
  Vec2 point;
  Quaternion rotation;
};

// Resamples a stroke at `samples` points uniformly spaced in arc length.
inline std::vector<StrokeSample> sample_stroke(const Stroke& stroke) {
  constexpr std::size_t kDense = 256;
  std::vector<Vec2> dense;
  for (std::size_t s = 0; s < stroke.segments.size(); ++s)
    for (std::size_t i = (s == 0 ? 0 : 1); i <= kDense; ++i)
      dense.push_back(stroke.segments[s].eval(static_cast<double>(i) / kDense));
  std::vector<double> cumulative(dense.size(), 0.0);
  for (std::size_t i = 1; i < dense.size(); ++i)
    cumulative[i] = cumulative[i - 1] + std::hypot(dense[i][0] - dense[i - 1][0], dense[i][1] - dense[i - 1][1]);
  const double total = cumulative.back();

  std::vector<StrokeSample> out;
  out.reserve(stroke.samples);
  for (std::size_t k = 0; k < stroke.samples; ++k) {
    const double u = static_cast<double>(k) / static_cast<double>(stroke.samples - 1);
    Vec2 p = dense.back();
    if (total > 0.0 && k + 1 < stroke.samples) {
      const double target = u * total;
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
      const std::size_t j = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - cumulative.begin()));
      const double span = cumulative[j] - cumulative[j - 1];
      const double f = span > 0.0 ? (target - cumulative[j - 1]) / span : 0.0;
      p = {dense[j - 1][0] + f * (dense[j][0] - dense[j - 1][0]), dense[j - 1][1] + f * (dense[j][1] - dense[j - 1][1])};
    } else if (k == 0) {
      p = dense.front();
    }
    const double tilt = stroke.tilt_start + u * (stroke.tilt_end - stroke.tilt_start);
    out.push_back({p, pen_orientation(tilt, stroke.tilt_azimuth)});
  }
  return out;
}

inline CharacterTemplate jitter_template(CharacterTemplate tpl, double jitter, Rng& rng) {
  if (jitter <= 0.0) return tpl;
  for (auto& stroke : tpl.strokes)
    for (auto& seg : stroke.segments)
      for (auto& p : seg.control) {
        p[0] = std::clamp(p[0] + rng.uniform(-jitter, jitter), 0.0, 1.0);
        p[1] = std::clamp(p[1] + rng.uniform(-jitter, jitter), 0.0, 1.0);
      }
  // Keep segments of one stroke joined.
  for (auto& stroke : tpl.strokes)
    for (std::size_t s = 1; s < stroke.segments.size(); ++s) stroke.segments[s].control[0] = stroke.segments[s - 1].control[3];
  return tpl;
}

}  // namespace detail

// Expert pose sequence for a template: each stroke drawn at z = 0, pen lifted
// to the travel height between strokes, then a rest at the final pose.
inline PoseTrajectory expert_poses(const CharacterTemplate& tpl, const SimConfig& cfg) {
  PoseTrajectory poses;
  auto push = [&](double x, double y, double z, const Quaternion& q) {
    poses.push_back(PoseState::make({x, y, z}, q, cfg.contact_threshold));
  };
  for (std::size_t k = 0; k < tpl.strokes.size(); ++k) {
    const auto samples = detail::sample_stroke(tpl.strokes[k]);
    if (k > 0) {
      const PoseState from = poses.back();
      const detail::StrokeSample& to = samples.front();
      for (std::size_t j = 1; j <= cfg.lift_steps; ++j) {
        push(from.translation[0], from.translation[1],
             cfg.travel_height * static_cast<double>(j) / static_cast<double>(cfg.lift_steps), from.rotation);
      }
      const double dist = std::hypot(to.point[0] - from.translation[0], to.point[1] - from.translation[1]);
      const auto n = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(dist / cfg.travel_step)));
      for (std::size_t j = 1; j <= n; ++j) {
        const double t = static_cast<double>(j) / static_cast<double>(n);
        push(from.translation[0] + t * (to.point[0] - from.translation[0]),
             from.translation[1] + t * (to.point[1] - from.translation[1]), cfg.travel_height,
             quat_nlerp(from.rotation, to.rotation, t));
      }
      for (std::size_t j = 1; j < cfg.descend_steps; ++j) {
        push(to.point[0], to.point[1],
             cfg.travel_height * (1.0 - static_cast<double>(j) / static_cast<double>(cfg.descend_steps)), to.rotation);
      }
    }
    for (const auto& s : samples) push(s.point[0], s.point[1], 0.0, s.rotation);
  }
  const PoseState last = poses.back();
  for (std::size_t j = 0; j < cfg.hold_steps; ++j) poses.push_back(last);
  return poses;
}

// Canvas after executing poses[1..]; the initial pose deposits no ink.
inline Canvas replay_canvas(const PoseTrajectory& poses, const SimConfig& cfg) {
  Canvas canvas(cfg.image_height, cfg.image_width);
  for (std::size_t i = 1; i < poses.size(); ++i) canvas = stamp(std::move(canvas), poses[i], cfg);
  return canvas;
}

inline Demonstration demonstration_from_poses(const std::string& template_id, std::uint64_t style_seed,
                                              const PoseTrajectory& poses, const SimConfig& cfg) {
  Demonstration demo;
  demo.template_id = template_id;
  demo.style_seed = style_seed;
  Canvas canvas(cfg.image_height, cfg.image_width);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (!poses[i].valid()) throw DomainError("expert pose violates pose invariants at step " + std::to_string(i));
    if (i > 0) canvas = stamp(std::move(canvas), poses[i], cfg);
    demo.observations.push_back(render_observation(canvas, poses[i], cfg));
    demo.pen_down.push_back(poses[i].pen_down ? 1 : 0);
  }
  demo.final_canvas = std::move(canvas);
  return demo;
}

// The template's control points are jittered by at most `style_jitter` per
// coordinate using a stream seeded from `style_seed`.
inline Demonstration generate_demonstration(const CharacterTemplate& tpl, std::uint64_t style_seed, double style_jitter,
                                            const SimConfig& cfg) {
  cfg.validate();
  tpl.validate();
  Rng rng(style_seed, "style");
  const auto styled = detail::jitter_template(tpl, style_jitter, rng);
  return demonstration_from_poses(tpl.id, style_seed, expert_poses(styled, cfg), cfg);
}

}  // namespace callig

#pragma once

// x-y overlay plots: ground truth in blue, inference in red, one panel per
// character. Pen-up segments are drawn in a lighter shade.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "callig/image.hpp"
#include "callig/pose.hpp"

namespace callig {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kTruthColor{30, 60, 220};
inline constexpr Rgb kInferenceColor{220, 30, 30};

struct PlotPanel {
  std::vector<std::pair<PoseTrajectory, Rgb>> traces;  // drawn in order
};

class PlotCanvas {
 public:
  PlotCanvas(std::size_t width, std::size_t height) : width_(width), height_(height), rgb_(width * height * 3, 255) {}

  void pixel(std::ptrdiff_t x, std::ptrdiff_t y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(width_) || y >= static_cast<std::ptrdiff_t>(height_)) return;
    std::copy(c.begin(), c.end(), rgb_.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x)) * 3));
  }

  void line(double x0, double y0, double x1, double y1, const Rgb& c, int thickness) {
    const double len = std::max(std::fabs(x1 - x0), std::fabs(y1 - y0));
    const auto n = static_cast<std::size_t>(std::ceil(len)) + 1;
    for (std::size_t i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(n);
      const auto px = static_cast<std::ptrdiff_t>(std::lround(x0 + t * (x1 - x0)));
      const auto py = static_cast<std::ptrdiff_t>(std::lround(y0 + t * (y1 - y0)));
      for (int dy = 0; dy < thickness; ++dy)
        for (int dx = 0; dx < thickness; ++dx) pixel(px + dx, py + dy, c);
    }
  }

  void frame(std::size_t x0, std::size_t y0, std::size_t size, const Rgb& c) {
    const double a = static_cast<double>(x0), b = static_cast<double>(y0), s = static_cast<double>(size - 1);
    line(a, b, a + s, b, c, 1);
    line(a, b + s, a + s, b + s, c, 1);
    line(a, b, a, b + s, c, 1);
    line(a + s, b, a + s, b + s, c, 1);
  }

  void save(const std::filesystem::path& path) const { write_png_rgb8(path, width_, height_, rgb_); }

 private:
  std::size_t width_, height_;
  std::vector<std::uint8_t> rgb_;
};

inline Rgb lighten(const Rgb& c) {
  return {static_cast<std::uint8_t>((c[0] + 2 * 255) / 3), static_cast<std::uint8_t>((c[1] + 2 * 255) / 3),
          static_cast<std::uint8_t>((c[2] + 2 * 255) / 3)};
}

// Writes a grid of panels (rows of equal length). Workspace [0,1]^2 maps to
// each panel with image y pointing down, as on the simulated canvas.
inline void write_overlay_plot(const std::filesystem::path& path, const std::vector<std::vector<PlotPanel>>& rows,
                               std::size_t panel = 192) {
  if (rows.empty() || rows.front().empty()) throw UsageError("write_overlay_plot: no panels");
  const std::size_t cols = rows.front().size();
  constexpr std::size_t kGap = 8;
  PlotCanvas canvas(cols * panel + (cols + 1) * kGap, rows.size() * panel + (rows.size() + 1) * kGap);
  const double margin = 0.1 * static_cast<double>(panel);
  const double span = static_cast<double>(panel) - 2.0 * margin;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw UsageError("write_overlay_plot: ragged panel grid");
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t ox = kGap + c * (panel + kGap), oy = kGap + r * (panel + kGap);
      canvas.frame(ox, oy, panel, {180, 180, 180});
      auto map = [&](const Vec3& t) {
        const double x = std::clamp(t[0], -0.1, 1.1), y = std::clamp(t[1], -0.1, 1.1);
        return std::pair{static_cast<double>(ox) + margin + x * span, static_cast<double>(oy) + margin + y * span};
      };
      for (const auto& [traj, color] : rows[r][c].traces) {
        for (std::size_t i = 1; i < traj.size(); ++i) {
          const auto [x0, y0] = map(traj[i - 1].translation);
          const auto [x1, y1] = map(traj[i].translation);
          const bool down = traj[i - 1].pen_down && traj[i].pen_down;
          canvas.line(x0, y0, x1, y1, down ? color : lighten(color), down ? 2 : 1);
        }
      }
    }
  }
  canvas.save(path);
}

inline PlotPanel overlay_panel(const PoseTrajectory& truth, const PoseTrajectory& inferred) {
  return {{{truth, kTruthColor}, {inferred, kInferenceColor}}};
}

}  // namespace callig

#pragma once

// Pen-tip pose: translation in the canvas workspace plus a scalar-first unit
// quaternion. Quaternions are kept canonical (w >= 0) so every rotation has a
// single representative.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "callig/errors.hpp"

namespace callig {

using Vec3 = std::array<double, 3>;

// Scalar-first (w, x, y, z).
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  friend bool operator==(const Quaternion&, const Quaternion&) = default;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
};

inline double dot(const Quaternion& a, const Quaternion& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

inline Quaternion operator*(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

// Unit norm, w >= 0.
inline Quaternion quat_normalize(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 1e-9)) throw DomainError("degenerate rotation: quaternion norm " + std::to_string(n));
  const double s = (q.w < 0.0 ? -1.0 : 1.0) / n;
  return {q.w * s, q.x * s, q.y * s, q.z * s};
}

inline Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (!(n > 0.0)) return {};
  const double s = std::sin(angle / 2.0) / n;
  return {std::cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s};
}

// Rotation angle between two unit orientations, in [0, pi]; q and -q
// coincide. Equals 2 acos(|<a, b>|), evaluated as 2 atan2(|v|, |w|) of the
// relative rotation conj(a) b. Each term of the vector part is an exact
// antisymmetric difference, so the result is symmetric and exactly 0 for b = +-a.
inline double quat_angular_distance(const Quaternion& a, const Quaternion& b) {
  const double vx = (a.w * b.x - b.w * a.x) - (a.y * b.z - a.z * b.y);
  const double vy = (a.w * b.y - b.w * a.y) - (a.z * b.x - a.x * b.z);
  const double vz = (a.w * b.z - b.w * a.z) - (a.x * b.y - a.y * b.x);
  const double w = dot(a, b);
  return 2.0 * std::atan2(std::sqrt(vx * vx + vy * vy + vz * vz), std::fabs(w));
}

inline Vec3 rotate(const Quaternion& q, const Vec3& v) {
  const Quaternion p{0.0, v[0], v[1], v[2]};
  const Quaternion r = q * p * Quaternion{q.w, -q.x, -q.y, -q.z};
  return {r.x, r.y, r.z};
}

// Normalized linear interpolation along the shorter arc.
inline Quaternion quat_nlerp(const Quaternion& a, Quaternion b, double t) {
  if (dot(a, b) < 0.0) b = -b;
  return quat_normalize({a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
                         a.z + t * (b.z - a.z)});
}

inline constexpr double kDefaultContactThreshold = 0.02;
inline constexpr double kDefaultTravelHeight = 0.1;

struct PoseState {
  Vec3 translation{0.0, 0.0, 0.0};
  Quaternion rotation{};
  bool pen_down = false;

  friend bool operator==(const PoseState&, const PoseState&) = default;

  // Canonicalizes the rotation and derives pen contact from the height.
  static PoseState make(const Vec3& t, const Quaternion& q, double contact_threshold = kDefaultContactThreshold) {
    return {t, quat_normalize(q), t[2] < contact_threshold};
  }

  // [t1 t2 t3 w x y z]
  std::array<double, 7> to_array() const {
    return {translation[0], translation[1], translation[2], rotation.w, rotation.x, rotation.y, rotation.z};
  }
  static PoseState from_array(std::span<const double> v, double contact_threshold = kDefaultContactThreshold) {
    return make({v[0], v[1], v[2]}, {v[3], v[4], v[5], v[6]}, contact_threshold);
  }

  bool valid() const {
    const bool finite = std::isfinite(translation[0]) && std::isfinite(translation[1]) && std::isfinite(translation[2]);
    return finite && std::fabs(rotation.norm() - 1.0) <= 1e-6 && rotation.w >= 0.0;
  }
};

inline double translation_distance(const PoseState& a, const PoseState& b) {
  const double dx = a.translation[0] - b.translation[0];
  const double dy = a.translation[1] - b.translation[1];
  const double dz = a.translation[2] - b.translation[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

using PoseTrajectory = std::vector<PoseState>;

// Flips signs so consecutive quaternions lie in the same hemisphere. The first
// quaternion is kept as given.
inline PoseTrajectory hemisphere_align(PoseTrajectory traj) {
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (dot(traj[i - 1].rotation, traj[i].rotation) < 0.0) traj[i].rotation = -traj[i].rotation;
  }
  return traj;
}

}  // namespace callig

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "c2fpose/errors.hpp"

namespace c2fpose {

template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vec4 = Eigen::Matrix<S, 4, 1>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Scalar-first quaternion (w, x, y, z).
template <typename S>
struct Quaternion {
  S w{1}, x{0}, y{0}, z{0};

  Quaternion() = default;
  Quaternion(S w_, S x_, S y_, S z_) : w(w_), x(x_), y(y_), z(z_) {}
  explicit Quaternion(const Vec4<S>& c) : w(c[0]), x(c[1]), y(c[2]), z(c[3]) {}

  Vec4<S> coeffs() const { return Vec4<S>(w, x, y, z); }
  S norm() const { return coeffs().stableNorm(); }

  Quaternion operator-() const { return {-w, -x, -y, -z}; }

  /// Hamilton product.
  Quaternion operator*(const Quaternion& r) const {
    return {w * r.w - x * r.x - y * r.y - z * r.z,
            w * r.x + x * r.w + y * r.z - z * r.y,
            w * r.y - x * r.z + y * r.w + z * r.x,
            w * r.z + x * r.y - y * r.x + z * r.w};
  }
};

template <typename S>
S dot(const Quaternion<S>& a, const Quaternion<S>& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

template <typename S>
Quaternion<S> normalize(const Quaternion<S>& q) {
  const S n = q.norm();
  if (!(n > S(0)) || !std::isfinite(n)) {
    throw InvalidQuaternionError("quaternion has zero or non-finite norm");
  }
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

/// Picks the double-cover representative with w >= 0 (if w == 0, the first
/// nonzero of x, y, z must be positive).
template <typename S>
Quaternion<S> canonicalize(const Quaternion<S>& q) {
  bool flip = false;
  if (q.w < S(0)) {
    flip = true;
  } else if (q.w == S(0)) {
    if (q.x < S(0)) {
      flip = true;
    } else if (q.x == S(0)) {
      if (q.y < S(0)) {
        flip = true;
      } else if (q.y == S(0)) {
        flip = q.z < S(0);
      }
    }
  }
  return flip ? -q : q;
}

template <typename S>
Quaternion<S> normalize_canonical(const Quaternion<S>& q) {
  return canonicalize(normalize(q));
}

/// Rotation of v by unit quaternion q.
template <typename S>
Vec3<S> rotate(const Quaternion<S>& q, const Vec3<S>& v) {
  const Quaternion<S> p(S(0), v[0], v[1], v[2]);
  const Quaternion<S> r = q * p * Quaternion<S>(q.w, -q.x, -q.y, -q.z);
  return Vec3<S>(r.x, r.y, r.z);
}

template <typename S>
Quaternion<S> from_axis_angle(const Vec3<S>& axis, S angle_rad) {
  const S n = axis.norm();
  if (!(n > S(0))) throw InvalidQuaternionError("axis has zero norm");
  const S h = angle_rad / S(2);
  const S s = std::sin(h) / n;
  return {std::cos(h), axis[0] * s, axis[1] * s, axis[2] * s};
}

template <typename S>
struct Pose {
  Vec3<S> position = Vec3<S>::Zero();
  Quaternion<S> orientation;  // unit, canonical
};

/// Builds a Pose, normalizing and canonicalizing the orientation.
template <typename S>
Pose<S> make_pose(const Vec3<S>& position, const Quaternion<S>& orientation) {
  return {position, normalize_canonical(orientation)};
}

template <typename S>
struct PoseError {
  S position_err{0};     // meters
  S orientation_err{0};  // degrees, in [0, 180]
};

template <typename S>
S position_error(const Vec3<S>& estimate, const Vec3<S>& truth) {
  return (truth - estimate).norm();
}

/// Angular error in degrees between two orientations, double cover folded.
/// Algebraically equal to 2·acos(|⟨a,b⟩|) for unit a, b, but the atan2 form
/// is exact at 0° and 180° and loses no precision near either pole.
template <typename S>
S orientation_error_deg(const Quaternion<S>& estimate, const Quaternion<S>& truth) {
  const Vec4<S> a = normalize(estimate).coeffs();
  const Vec4<S> b = normalize(truth).coeffs();
  const S du = (a - b).stableNorm();
  const S dv = (a + b).stableNorm();
  return S(4) * std::atan2(std::min(du, dv), std::max(du, dv)) * S(180) / S(M_PI);
}

template <typename S>
PoseError<S> pose_error(const Pose<S>& estimate, const Pose<S>& truth) {
  return {position_error(estimate.position, truth.position),
          orientation_error_deg(estimate.orientation, truth.orientation)};
}

/// Componentwise median; even counts take the lower median.
template <typename S>
PoseError<S> median_errors(const std::vector<PoseError<S>>& samples) {
  if (samples.empty()) throw EmptyInputError("median_errors: empty sample list");
  std::vector<S> pos, ori;
  pos.reserve(samples.size());
  ori.reserve(samples.size());
  for (const auto& e : samples) {
    pos.push_back(e.position_err);
    ori.push_back(e.orientation_err);
  }
  const size_t mid = (samples.size() - 1) / 2;
  std::nth_element(pos.begin(), pos.begin() + mid, pos.end());
  std::nth_element(ori.begin(), ori.begin() + mid, ori.end());
  return {pos[mid], ori[mid]};
}

}  // namespace c2fpose

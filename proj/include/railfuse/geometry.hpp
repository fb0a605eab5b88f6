// Rotation/pose algebra shared by every module.
//
// Conventions, fixed once for the whole project:
//   - quaternions are Hamilton, passive, stored (w, x, y, z), canonical w >= 0
//   - rotations act on column vectors, world = R * body
//   - small-angle threshold 1e-8 rad with 4th-order Taylor fallbacks

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace railfuse {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kSmallAngle = 1e-8;

// [w]_x, laid out so that skew(a) * b == a.cross(b).
inline Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

// 4x4 block form [[-[w]_x, w], [-w^T, 0]] driving the quaternion
// derivative gdot = 1/2 * Omega(w) * g for g stored (x, y, z, w).
inline Mat4 big_omega(const Vec3& w) {
  Mat4 m;
  m.topLeftCorner<3, 3>() = -skew(w);
  m.topRightCorner<3, 1>() = w;
  m.bottomLeftCorner<1, 3>() = -w.transpose();
  m(3, 3) = 0.0;
  return m;
}

class Quat {
 public:
  Quat() : w_(1.0), v_(Vec3::Zero()) {}
  Quat(double w, double x, double y, double z) : w_(w), v_(x, y, z) { normalize_(); }
  Quat(double w, const Vec3& v) : w_(w), v_(v) { normalize_(); }

  static Quat identity() { return Quat(); }

  double w() const { return w_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  const Vec3& vec() const { return v_; }

  Eigen::Vector4d wxyz() const { return { w_, v_.x(), v_.y(), v_.z() }; }

  // Hamilton product.
  Quat operator*(const Quat& r) const {
    return Quat(w_ * r.w_ - v_.dot(r.v_), w_ * r.v_ + r.w_ * v_ + v_.cross(r.v_));
  }

  Quat inverse() const {
    // unit norm is a class invariant, so conjugate == inverse
    return Quat(w_, -v_);
  }

  Vec3 rotate(const Vec3& p) const {
    const Vec3 t = 2.0 * v_.cross(p);
    return p + w_ * t + v_.cross(t);
  }

  Mat3 matrix() const {
    Mat3 m;
    const double w = w_, x = v_.x(), y = v_.y(), z = v_.z();
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return m;
  }

  static Quat from_matrix(const Mat3& m) {
    const Eigen::Quaterniond q(m);
    return Quat(q.w(), q.x(), q.y(), q.z());
  }

  bool approx(const Quat& r, double tol = 1e-12) const {
    return (wxyz() - r.wxyz()).norm() < tol || (wxyz() + r.wxyz()).norm() < tol;
  }

 private:
  void normalize_() {
    const double n = std::sqrt(w_ * w_ + v_.squaredNorm());
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("Quat: non-finite or zero norm");
    w_ /= n;
    v_ /= n;
    if (w_ < 0.0) {  // canonical sign
      w_ = -w_;
      v_ = -v_;
    }
  }

  double w_;
  Vec3 v_;
};

// Unit quaternion of the rotation by |omega| about omega/|omega|.
inline Quat so3_exp(const Vec3& omega) {
  const double th = omega.norm();
  double s;  // sin(th/2)/th
  if (th < kSmallAngle) {
    const double th2 = th * th;
    s = 0.5 - th2 / 48.0 + th2 * th2 / 3840.0;
  } else {
    s = std::sin(0.5 * th) / th;
  }
  return Quat(std::cos(0.5 * th), s * omega);
}

// Rotation vector of q; inverse of so3_exp on the w >= 0 half sphere.
inline Vec3 so3_log(const Quat& q) {
  const double vn = q.vec().norm();
  if (vn < kSmallAngle) {
    return 2.0 / q.w() * q.vec();
  }
  const double th = 2.0 * std::atan2(vn, q.w());
  return (th / vn) * q.vec();
}

// Right Jacobian of SO(3): Exp(u + du) ~= Exp(u) * Exp(Jr(u) du).
inline Mat3 so3_right_jacobian(const Vec3& u) {
  const double th = u.norm();
  const Mat3 ux = skew(u);
  if (th < kSmallAngle) {
    return Mat3::Identity() - 0.5 * ux + ux * ux / 6.0;
  }
  const double th2 = th * th;
  return Mat3::Identity() - (1.0 - std::cos(th)) / th2 * ux +
         (th - std::sin(th)) / (th2 * th) * ux * ux;
}

// Left-multiplication matrix in (w,x,y,z) components: L(q) * p* = (q x p)*.
inline Mat4 quat_left(const Quat& q) {
  Mat4 m;
  m(0, 0) = q.w();
  m.block<1, 3>(0, 1) = -q.vec().transpose();
  m.block<3, 1>(1, 0) = q.vec();
  m.block<3, 3>(1, 1) = q.w() * Mat3::Identity() + skew(q.vec());
  return m;
}

// Right-multiplication matrix: R(p) * q* = (q x p)*.
inline Mat4 quat_right(const Quat& p) {
  Mat4 m;
  m(0, 0) = p.w();
  m.block<1, 3>(0, 1) = -p.vec().transpose();
  m.block<3, 1>(1, 0) = p.vec();
  m.block<3, 3>(1, 1) = p.w() * Mat3::Identity() - skew(p.vec());
  return m;
}

inline Quat slerp(const Quat& a, const Quat& b, double s) {
  // interpolate along the relative rotation so the result stays on the
  // short arc regardless of sign conventions
  return a * so3_exp(s * so3_log(a.inverse() * b));
}

struct Pose {
  Quat rotation;
  Vec3 translation = Vec3::Zero();

  Pose() = default;
  Pose(const Quat& q, const Vec3& t) : rotation(q), translation(t) {}

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation.rotate(p) + translation; }

  Pose operator*(const Pose& r) const {
    return { rotation * r.rotation, rotation.rotate(r.translation) + translation };
  }

  Pose inverse() const {
    const Quat qi = rotation.inverse();
    return { qi, -qi.rotate(translation) };
  }

  double translation_distance(const Pose& r) const { return (translation - r.translation).norm(); }
  double rotation_angle(const Pose& r) const { return so3_log(rotation.inverse() * r.rotation).norm(); }
};

inline Pose interpolate(const Pose& a, const Pose& b, double s) {
  return { slerp(a.rotation, b.rotation, s), (1.0 - s) * a.translation + s * b.translation };
}

}  // namespace railfuse

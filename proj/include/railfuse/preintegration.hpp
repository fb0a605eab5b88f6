// IMU/odometer measurement models, preintegrated increments between
// keyframes, error-state covariance/Jacobian recursion, first-order bias
// correction and the 19-dim preintegration residual.
//
// Error-state ordering everywhere: [da(3), db(3), dtheta(3), dba(3),
// dbg(3), dphi(3), dc(1)], matching the residual stacking. Noise vector:
// [na(3), nw(3), nba(3), nbg(3), npo(3), nso(1)].

#pragma once

#include "railfuse/geometry.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>

namespace railfuse {

struct ImuSample {
  double t = 0.0;             // s
  Vec3 accel = Vec3::Zero();  // m/s^2, specific force
  Vec3 gyro = Vec3::Zero();   // rad/s
};

struct OdometerSample {
  double t = 0.0;
  double pulses_per_second = 0.0;
  double pulses_per_turn = 1024.0;
  double wheel_diameter = 0.86;  // m
};

// v = (n_odo / N_odo) * pi * d_wheel
inline double odo_velocity(const OdometerSample& s) {
  if (!(s.pulses_per_turn > 0.0)) throw std::invalid_argument("odo_velocity: pulses_per_turn <= 0");
  if (!(s.wheel_diameter > 0.0)) throw std::invalid_argument("odo_velocity: wheel_diameter <= 0");
  return s.pulses_per_second / s.pulses_per_turn * M_PI * s.wheel_diameter;
}

struct NoiseParams {
  double sigma_a = 2e-2;   // accel white noise density
  double sigma_w = 2e-3;   // gyro white noise density
  double sigma_ba = 1e-4;  // accel bias random walk
  double sigma_bg = 1e-5;  // gyro bias random walk
  double sigma_so = 1e-4;  // odometer scale random walk
  double sigma_po = 2e-2;  // odometer displacement noise

  bool valid() const {
    return sigma_a > 0 && sigma_w > 0 && sigma_ba > 0 && sigma_bg > 0 && sigma_so > 0 &&
           sigma_po > 0;
  }
};

struct BodyOdoExtrinsic {
  Mat3 R_OB = Mat3::Identity();  // odometer frame -> body frame
  Vec3 p_OB = Vec3::Zero();      // odometer lever arm in body frame
};

struct NavState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quat q;
  Vec3 ba = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  double c_odo = 1.0;

  static constexpr int kTangentDim = 16;  // [dp dv dtheta dba dbg dc]
  using Tangent = Eigen::Matrix<double, 16, 1>;

  NavState boxplus(const Tangent& d) const {
    NavState out = *this;
    out.p += d.segment<3>(0);
    out.v += d.segment<3>(3);
    out.q = q * so3_exp(d.segment<3>(6));
    out.ba += d.segment<3>(9);
    out.bg += d.segment<3>(12);
    out.c_odo += d(15);
    return out;
  }

  Tangent boxminus(const NavState& other) const {
    Tangent d;
    d.segment<3>(0) = p - other.p;
    d.segment<3>(3) = v - other.v;
    d.segment<3>(6) = so3_log(other.q.inverse() * q);
    d.segment<3>(9) = ba - other.ba;
    d.segment<3>(12) = bg - other.bg;
    d(15) = c_odo - other.c_odo;
    return d;
  }

  bool scale_sane() const { return c_odo > 0.5 && c_odo < 2.0; }
};

// Error-state block offsets.
namespace preint_idx {
inline constexpr int kAlpha = 0;
inline constexpr int kBeta = 3;
inline constexpr int kTheta = 6;
inline constexpr int kBa = 9;
inline constexpr int kBg = 12;
inline constexpr int kPhi = 15;
inline constexpr int kC = 18;
inline constexpr int kDim = 19;
inline constexpr int kNoiseDim = 16;
}  // namespace preint_idx

using Mat19 = Eigen::Matrix<double, 19, 19>;
using Vec19 = Eigen::Matrix<double, 19, 1>;

// Re-preintegration thresholds for the first-order bias correction.
inline constexpr double kMaxGyroBiasDelta = 1e-3;   // rad/s
inline constexpr double kMaxAccelBiasDelta = 1e-2;  // m/s^2

namespace detail {
// Raw (w,x,y,z) quaternion algebra without normalization, for Jacobian
// bookkeeping where intermediate sign flips must not occur.
using Vec4 = Eigen::Vector4d;
inline Vec4 qconj(const Vec4& q) { return { q(0), -q(1), -q(2), -q(3) }; }
inline Mat4 qleft(const Vec4& q) {
  Mat4 m;
  m(0, 0) = q(0);
  m.block<1, 3>(0, 1) = -q.tail<3>().transpose();
  m.block<3, 1>(1, 0) = q.tail<3>();
  m.block<3, 3>(1, 1) = q(0) * Mat3::Identity() + skew(q.tail<3>());
  return m;
}
inline Mat4 qright(const Vec4& q) {
  Mat4 m;
  m(0, 0) = q(0);
  m.block<1, 3>(0, 1) = -q.tail<3>().transpose();
  m.block<3, 1>(1, 0) = q.tail<3>();
  m.block<3, 3>(1, 1) = q(0) * Mat3::Identity() - skew(q.tail<3>());
  return m;
}
inline Vec4 qmul(const Vec4& a, const Vec4& b) { return qleft(a) * b; }
}  // namespace detail

class PreintegratedDelta {
 public:
  Vec3 alpha = Vec3::Zero();  // position increment, body-at-k frame
  Vec3 beta = Vec3::Zero();   // velocity increment
  Quat gamma;                 // rotation increment
  Vec3 phi = Vec3::Zero();    // odometer displacement, body-at-k frame
  double dt_total = 0.0;
  Vec3 lin_ba = Vec3::Zero();
  Vec3 lin_bg = Vec3::Zero();
  double lin_c = 1.0;
  Mat19 J = Mat19::Identity();
  Mat19 P = Mat19::Zero();

  PreintegratedDelta() = default;

  // phi starts at the lever arm so the phi residual row, which carries
  // R_{k+1} p_OB on the state side, vanishes on consistent trajectories.
  static PreintegratedDelta start(const Vec3& ba, const Vec3& bg, double c,
                                  const BodyOdoExtrinsic& ext) {
    PreintegratedDelta d;
    d.lin_ba = ba;
    d.lin_bg = bg;
    d.lin_c = c;
    d.phi = ext.p_OB;
    return d;
  }

  // One forward-Euler step of the discrete increment recursion plus the
  // error-state Jacobian/covariance recursion.
  void integrate(const ImuSample& imu, double odo_v, const BodyOdoExtrinsic& ext, double dt,
                 const NoiseParams& noise) {
    if (!(dt > 0.0)) throw std::invalid_argument("PreintegratedDelta::integrate: dt <= 0");
    Mat19 F, N;
    step_matrices(imu, odo_v, ext, dt, noise, F, N);
    J = F * J;
    P = F * P * F.transpose() + N;
    P = 0.5 * (P + P.transpose());
    integrate_nominal(imu, odo_v, ext, dt);
  }

  // Nominal-state part only (also used by finite-difference harnesses).
  void integrate_nominal(const ImuSample& imu, double odo_v, const BodyOdoExtrinsic& ext,
                         double dt) {
    const Vec3 a = imu.accel - lin_ba;
    const Vec3 w = imu.gyro - lin_bg;
    const Mat3 R = gamma.matrix();
    alpha += beta * dt + 0.5 * R * a * dt * dt;
    beta += R * a * dt;
    phi += R * (ext.R_OB * Vec3(lin_c * odo_v, 0.0, 0.0)) * dt;
    gamma = gamma * so3_exp(w * dt);
    dt_total += dt;
  }

  // Discrete error-state transition F and additive noise covariance N for
  // one step, evaluated at the current nominal state.
  void step_matrices(const ImuSample& imu, double odo_v, const BodyOdoExtrinsic& ext, double dt,
                     const NoiseParams& noise, Mat19& F, Mat19& N) const {
    using namespace preint_idx;
    const Vec3 a = imu.accel - lin_ba;
    const Vec3 w = imu.gyro - lin_bg;
    const Mat3 R = gamma.matrix();
    const Vec3 odo_body = ext.R_OB * Vec3(lin_c * odo_v, 0.0, 0.0);

    F = Mat19::Identity();
    F.block<3, 3>(kAlpha, kBeta) = Mat3::Identity() * dt;
    F.block<3, 3>(kAlpha, kTheta) = -0.5 * dt * dt * R * skew(a);
    F.block<3, 3>(kAlpha, kBa) = -0.5 * dt * dt * R;
    F.block<3, 3>(kBeta, kTheta) = -dt * R * skew(a);
    F.block<3, 3>(kBeta, kBa) = -dt * R;
    F.block<3, 3>(kTheta, kTheta) = so3_exp(-w * dt).matrix();
    F.block<3, 3>(kTheta, kBg) = -dt * so3_right_jacobian(w * dt);
    F.block<3, 3>(kPhi, kTheta) = -dt * R * skew(odo_body);
    F.block<3, 1>(kPhi, kC) = dt * R * ext.R_OB * Vec3(odo_v, 0.0, 0.0);

    // noise columns: [na nw nba nbg npo nso]
    Eigen::Matrix<double, 19, 16> A = Eigen::Matrix<double, 19, 16>::Zero();
    A.block<3, 3>(kAlpha, 0) = 0.5 * dt * dt * R;
    A.block<3, 3>(kBeta, 0) = dt * R;
    A.block<3, 3>(kTheta, 3) = dt * Mat3::Identity();
    A.block<3, 3>(kBa, 6) = dt * Mat3::Identity();
    A.block<3, 3>(kBg, 9) = dt * Mat3::Identity();
    A.block<3, 3>(kPhi, 12) = dt * R * ext.R_OB;
    A(kC, 15) = dt;

    Eigen::Matrix<double, 16, 1> q;
    q << Vec3::Constant(noise.sigma_a * noise.sigma_a),
        Vec3::Constant(noise.sigma_w * noise.sigma_w),
        Vec3::Constant(noise.sigma_ba * noise.sigma_ba),
        Vec3::Constant(noise.sigma_bg * noise.sigma_bg),
        Vec3::Constant(noise.sigma_po * noise.sigma_po), noise.sigma_so * noise.sigma_so;
    N = A * q.asDiagonal() * A.transpose() / dt;
  }

  // Bias-Jacobian blocks of the accumulated J.
  Mat3 J_alpha_ba() const { return J.block<3, 3>(preint_idx::kAlpha, preint_idx::kBa); }
  Mat3 J_alpha_bg() const { return J.block<3, 3>(preint_idx::kAlpha, preint_idx::kBg); }
  Mat3 J_beta_ba() const { return J.block<3, 3>(preint_idx::kBeta, preint_idx::kBa); }
  Mat3 J_beta_bg() const { return J.block<3, 3>(preint_idx::kBeta, preint_idx::kBg); }
  Mat3 J_gamma_bg() const { return J.block<3, 3>(preint_idx::kTheta, preint_idx::kBg); }
  Mat3 J_phi_bg() const { return J.block<3, 3>(preint_idx::kPhi, preint_idx::kBg); }
  Vec3 J_phi_c() const { return J.block<3, 1>(preint_idx::kPhi, preint_idx::kC); }

  bool needs_reintegration(const Vec3& dba, const Vec3& dbg) const {
    return dbg.norm() > kMaxGyroBiasDelta || dba.norm() > kMaxAccelBiasDelta;
  }

  // First-order correction to shifted linearization points; nullopt when
  // the bias delta exceeds the validity band and a full re-integration is
  // required instead.
  std::optional<PreintegratedDelta> correct_first_order(const Vec3& dba, const Vec3& dbg,
                                                        double dc) const {
    if (needs_reintegration(dba, dbg)) return std::nullopt;
    PreintegratedDelta out = *this;
    out.alpha += J_alpha_ba() * dba + J_alpha_bg() * dbg;
    out.beta += J_beta_ba() * dba + J_beta_bg() * dbg;
    out.gamma = gamma * Quat(1.0, 0.5 * (J_gamma_bg() * dbg));
    out.phi += J_phi_bg() * dbg + J_phi_c() * dc;
    out.lin_ba += dba;
    out.lin_bg += dbg;
    out.lin_c += dc;
    return out;
  }
};

// 19-dim residual of the preintegration factor between states k and k+1.
// The first-order bias/scale correction from the delta's linearization
// points to the biases held in x_k is applied internally, so the result
// is a plain function of the two states.
inline Vec19 preint_residual(const PreintegratedDelta& d, const NavState& xk, const NavState& xk1,
                             const Vec3& gravity, const BodyOdoExtrinsic& ext) {
  using namespace preint_idx;
  const Vec3 dba = xk.ba - d.lin_ba;
  const Vec3 dbg = xk.bg - d.lin_bg;
  const double dc = xk.c_odo - d.lin_c;

  const Vec3 alpha_c = d.alpha + d.J_alpha_ba() * dba + d.J_alpha_bg() * dbg;
  const Vec3 beta_c = d.beta + d.J_beta_ba() * dba + d.J_beta_bg() * dbg;
  const Quat gamma_c = d.gamma * Quat(1.0, 0.5 * (d.J_gamma_bg() * dbg));
  const Vec3 phi_c = d.phi + d.J_phi_bg() * dbg + d.J_phi_c() * dc;

  const Mat3 RkT = xk.q.matrix().transpose();
  const double T = d.dt_total;
  Vec19 r;
  r.segment<3>(kAlpha) = RkT * (xk1.p - xk.p + 0.5 * gravity * T * T - xk.v * T) - alpha_c;
  r.segment<3>(kBeta) = RkT * (xk1.v + gravity * T - xk.v) - beta_c;
  const Quat e = (xk.q.inverse() * xk1.q) * gamma_c.inverse();
  r.segment<3>(kTheta) = 2.0 * e.vec();  // canonical w >= 0 picks the short arc
  r.segment<3>(kBa) = xk1.ba - xk.ba;
  r.segment<3>(kBg) = xk1.bg - xk.bg;
  r.segment<3>(kPhi) = RkT * (xk1.p - xk.p + xk1.q.matrix() * ext.p_OB) - phi_c;
  r(kC) = xk1.c_odo - xk.c_odo;
  return r;
}

struct PreintJacobians {
  Eigen::Matrix<double, 19, 16> d_xk;
  Eigen::Matrix<double, 19, 16> d_xk1;
};

// Analytic Jacobians of preint_residual w.r.t. the 16-dim tangents of
// both states (right-multiplicative rotation perturbation).
inline PreintJacobians preint_residual_jacobians(const PreintegratedDelta& d, const NavState& xk,
                                                 const NavState& xk1, const Vec3& gravity,
                                                 const BodyOdoExtrinsic& ext) {
  using namespace preint_idx;
  PreintJacobians out;
  auto& Jk = out.d_xk;
  auto& Jk1 = out.d_xk1;
  Jk.setZero();
  Jk1.setZero();

  const Vec3 dbg = xk.bg - d.lin_bg;
  const Quat gamma_c = d.gamma * Quat(1.0, 0.5 * (d.J_gamma_bg() * dbg));

  const Mat3 Rk = xk.q.matrix();
  const Mat3 RkT = Rk.transpose();
  const Mat3 Rk1 = xk1.q.matrix();
  const double T = d.dt_total;

  // tangent offsets: dp 0, dv 3, dtheta 6, dba 9, dbg 12, dc 15
  const Vec3 u_alpha = xk1.p - xk.p + 0.5 * gravity * T * T - xk.v * T;
  Jk.block<3, 3>(kAlpha, 0) = -RkT;
  Jk.block<3, 3>(kAlpha, 3) = -RkT * T;
  Jk.block<3, 3>(kAlpha, 6) = skew(RkT * u_alpha);
  Jk.block<3, 3>(kAlpha, 9) = -d.J_alpha_ba();
  Jk.block<3, 3>(kAlpha, 12) = -d.J_alpha_bg();
  Jk1.block<3, 3>(kAlpha, 0) = RkT;

  const Vec3 u_beta = xk1.v + gravity * T - xk.v;
  Jk.block<3, 3>(kBeta, 3) = -RkT;
  Jk.block<3, 3>(kBeta, 6) = skew(RkT * u_beta);
  Jk.block<3, 3>(kBeta, 9) = -d.J_beta_ba();
  Jk.block<3, 3>(kBeta, 12) = -d.J_beta_bg();
  Jk1.block<3, 3>(kBeta, 3) = RkT;

  // theta row in raw 4-vector algebra; the residual equals
  // 2*sgn*vec(B_raw) with sgn the canonicalization sign
  {
    using detail::qconj;
    using detail::qleft;
    using detail::qmul;
    using detail::qright;
    const Eigen::Vector4d A = qmul(qconj(xk.q.wxyz()), xk1.q.wxyz());
    const Eigen::Vector4d ginv = qconj(gamma_c.wxyz());
    const Eigen::Vector4d B = qmul(A, ginv);
    const double sgn = B(0) >= 0.0 ? 1.0 : -1.0;
    const Mat4 LA_Rg = qleft(A) * qright(ginv);
    // exact derivative of the normalized correction quaternion at dbg != 0
    const Vec3 u = 0.5 * (d.J_gamma_bg() * dbg);
    const Mat3 G_eff = (Mat3::Identity() - skew(u)) * d.J_gamma_bg() / (1.0 + u.squaredNorm());
    Jk.block<3, 3>(kTheta, 6) = -sgn * qright(B).block<3, 3>(1, 1);
    Jk.block<3, 3>(kTheta, 12) = -sgn * LA_Rg.block<3, 3>(1, 1) * G_eff;
    Jk1.block<3, 3>(kTheta, 6) = sgn * LA_Rg.block<3, 3>(1, 1);
  }

  Jk.block<3, 3>(kBa, 9) = -Mat3::Identity();
  Jk1.block<3, 3>(kBa, 9) = Mat3::Identity();
  Jk.block<3, 3>(kBg, 12) = -Mat3::Identity();
  Jk1.block<3, 3>(kBg, 12) = Mat3::Identity();

  const Vec3 u_phi = xk1.p - xk.p + Rk1 * ext.p_OB;
  Jk.block<3, 3>(kPhi, 0) = -RkT;
  Jk.block<3, 3>(kPhi, 6) = skew(RkT * u_phi);
  Jk.block<3, 3>(kPhi, 12) = -d.J_phi_bg();
  Jk.block<3, 1>(kPhi, 15) = -d.J_phi_c();
  Jk1.block<3, 3>(kPhi, 0) = RkT;
  Jk1.block<3, 3>(kPhi, 6) = -RkT * Rk1 * skew(ext.p_OB);

  Jk(kC, 15) = -1.0;
  Jk1(kC, 15) = 1.0;
  return out;
}

}  // namespace railfuse

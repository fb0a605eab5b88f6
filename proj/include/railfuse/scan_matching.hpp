// Feature correspondence search, point-to-line/plane residuals, the three
// favor factors, the fused two-LiDAR residual, and the Gauss-Newton inner
// solve used by the frontend.

#pragma once

#include "railfuse/features.hpp"
#include "railfuse/geometry.hpp"
#include "railfuse/kdtree.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

namespace railfuse {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// ||(p-e1) x (p-e2)|| / ||e1-e2||
inline double point_to_line(const Vec3& p, const Vec3& e1, const Vec3& e2) {
  const Vec3 base = e1 - e2;
  const double bn = base.norm();
  if (bn < 1e-12) throw std::invalid_argument("point_to_line: coincident anchors");
  return (p - e1).cross(p - e2).norm() / bn;
}

// |(p-r1) . ((r1-r2) x (r1-r3))| / ||(r1-r2) x (r1-r3)||
inline double point_to_plane(const Vec3& p, const Vec3& r1, const Vec3& r2, const Vec3& r3) {
  const Vec3 n = (r1 - r2).cross(r1 - r3);
  const double nn = n.norm();
  if (nn < 1e-12) throw std::invalid_argument("point_to_plane: collinear anchors");
  return std::abs((p - r1).dot(n)) / nn;
}

struct Correspondence {
  enum class Kind : uint8_t { kEdge, kPlanar } kind = Kind::kEdge;
  Vec3 body_point = Vec3::Zero();  // feature in the body frame
  Vec3 a1 = Vec3::Zero(), a2 = Vec3::Zero(), a3 = Vec3::Zero();  // world anchors

  double distance(const Pose& pose) const {
    const Vec3 pw = pose * body_point;
    return kind == Kind::kEdge ? point_to_line(pw, a1, a2) : point_to_plane(pw, a1, a2, a3);
  }

  // d(distance)/d[dt, dtheta] with right-multiplicative rotation update
  Vec6 jacobian(const Pose& pose) const {
    const Vec3 pw = pose * body_point;
    Vec3 g;  // d(distance)/d(pw)
    if (kind == Kind::kEdge) {
      const Vec3 base = a1 - a2;
      const Vec3 n = (pw - a1).cross(pw - a2);
      const double nn = std::max(n.norm(), 1e-12);
      g = (n / nn).cross(a2 - a1) / base.norm();
    } else {
      const Vec3 n = (a1 - a2).cross(a1 - a3);
      const Vec3 un = n / n.norm();
      const double s = (pw - a1).dot(un);
      g = (s >= 0 ? 1.0 : -1.0) * un;
    }
    Vec6 j;
    j.head<3>() = g;
    j.tail<3>() = -pose.rotation.matrix().transpose().transpose() * skew(body_point) * 0.0 -
                  (pose.rotation.matrix() * skew(body_point)).transpose() * g * 0.0;
    // d pw / d dtheta = -R [x]_x
    j.tail<3>() = -(pose.rotation.matrix() * skew(body_point)).transpose() * g;
    return j;
  }
};

struct FavorFactors {
  int xi_f = 1;       // {1, 50, 100}
  int xi_d = 1;       // {1, 10}
  double xi_p = 1.0;  // > 0

  double weight() const { return 1.0 / (static_cast<double>(xi_f) * xi_d * xi_p); }
};

// World-frame feature map with search indices.
struct FeatureMap {
  std::vector<Vec3> edges;
  std::vector<Vec3> planars;
  KdTree edge_tree;
  KdTree planar_tree;

  void build() {
    edge_tree.build(edges);
    planar_tree.build(planars);
  }
  bool empty() const { return edges.empty() && planars.empty(); }
};

struct MatchConfig {
  double max_nn_dist = 1.0;       // m, gate on the nearest neighbor
  int knn = 5;
  double line_ratio = 3.0;        // principal/секond eigenvalue ratio for edges
  double plane_flatness = 0.05;   // m, rms off-plane tolerance
  double huber_delta = 0.1;       // m; <= 0 disables the robustifier
  int max_iterations = 10;
  double step_tol = 1e-6;
};

// Anchor construction from the 5 nearest map points of the right class.
inline std::vector<Correspondence> find_correspondences(const FeatureCloud& features,
                                                        const FeatureMap& map,
                                                        const Pose& pose_guess,
                                                        const MatchConfig& cfg = {}) {
  std::vector<Correspondence> out;
  if (map.empty()) return out;

  auto fit_stats = [](const std::vector<KdTree::Neighbor>& nn, const KdTree& tree, Vec3& mean,
                      Mat3& cov) {
    mean = Vec3::Zero();
    for (const auto& n : nn) mean += tree.point(n.index);
    mean /= static_cast<double>(nn.size());
    cov = Mat3::Zero();
    for (const auto& n : nn) {
      const Vec3 d = tree.point(n.index) - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nn.size());
  };

  for (const auto& f : features.edges) {
    if (map.edges.size() < static_cast<size_t>(cfg.knn)) break;
    const Vec3 pw = pose_guess * f.p;
    const auto nn = map.edge_tree.knn(pw, cfg.knn);
    if (nn.empty() || nn.front().sq_dist > cfg.max_nn_dist * cfg.max_nn_dist) continue;
    Vec3 mean;
    Mat3 cov;
    fit_stats(nn, map.edge_tree, mean, cov);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    if (es.eigenvalues()(2) < cfg.line_ratio * es.eigenvalues()(1)) continue;  // not line-like
    const Vec3 dir = es.eigenvectors().col(2);
    // anchors at the extreme projections along the principal direction
    double lo = 1e18, hi = -1e18;
    int ilo = nn.front().index, ihi = nn.front().index;
    for (const auto& n : nn) {
      const double s = dir.dot(map.edge_tree.point(n.index) - mean);
      if (s < lo) { lo = s; ilo = n.index; }
      if (s > hi) { hi = s; ihi = n.index; }
    }
    if ((map.edge_tree.point(ihi) - map.edge_tree.point(ilo)).norm() < 1e-6) continue;
    Correspondence c;
    c.kind = Correspondence::Kind::kEdge;
    c.body_point = f.p;
    c.a1 = map.edge_tree.point(ilo);
    c.a2 = map.edge_tree.point(ihi);
    out.push_back(c);
  }

  for (const auto& f : features.planars) {
    if (map.planars.size() < static_cast<size_t>(cfg.knn)) break;
    const Vec3 pw = pose_guess * f.p;
    const auto nn = map.planar_tree.knn(pw, cfg.knn);
    if (nn.empty() || nn.front().sq_dist > cfg.max_nn_dist * cfg.max_nn_dist) continue;
    Vec3 mean;
    Mat3 cov;
    fit_stats(nn, map.planar_tree, mean, cov);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    if (std::sqrt(std::max(0.0, es.eigenvalues()(0))) > cfg.plane_flatness) continue;
    // three spread anchors: first, farthest from it, max triangle area
    const Vec3 p1 = map.planar_tree.point(nn[0].index);
    int i2 = -1, i3 = -1;
    double best2 = -1.0;
    for (const auto& n : nn) {
      const double d = (map.planar_tree.point(n.index) - p1).norm();
      if (d > best2) { best2 = d; i2 = n.index; }
    }
    const Vec3 p2 = map.planar_tree.point(i2);
    double best3 = -1.0;
    for (const auto& n : nn) {
      const double area = (p2 - p1).cross(map.planar_tree.point(n.index) - p1).norm();
      if (area > best3) { best3 = area; i3 = n.index; }
    }
    const Vec3 p3 = map.planar_tree.point(i3);
    if ((p2 - p1).cross(p3 - p1).norm() < 1e-8) continue;  // collinear
    Correspondence c;
    c.kind = Correspondence::Kind::kPlanar;
    c.body_point = f.p;
    c.a1 = p1;
    c.a2 = p2;
    c.a3 = p3;
    out.push_back(c);
  }
  return out;
}

// Sum of squared correspondence distances at the given pose.
inline double lidar_residual(const std::vector<Correspondence>& corrs, const Pose& pose) {
  double r = 0.0;
  for (const auto& c : corrs) {
    const double d = c.distance(pose);
    r += d * d;
  }
  return r;
}

struct DegeneracyResult {
  double lambda_min = 0.0;
  int xi_d = 1;
};

// Smallest eigenvalue of the (symmetric) information matrix of the inner
// solve; xi_d = 10 at or below the calibrated threshold.
inline DegeneracyResult degeneracy_factor(const Mat6& H, double e_lambda) {
  if ((H - H.transpose()).norm() > 1e-6 * std::max(1.0, H.norm())) {
    throw std::invalid_argument("degeneracy_factor: non-symmetric H");
  }
  Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (H + H.transpose()));
  DegeneracyResult r;
  r.lambda_min = es.eigenvalues().minCoeff();
  r.xi_d = r.lambda_min <= e_lambda ? 10 : 1;
  return r;
}

// Pose estimation factor: ratio of the LiDAR translation increment to the
// IMU-predicted one, symmetrized so any disagreement down-weights.
inline double pose_factor(const Vec3& p_imu_incr, const Vec3& p_lidar_incr) {
  const double nb = p_imu_incr.norm();
  if (nb <= 1e-6) return 1.0;  // no information while stationary
  const double ratio = p_lidar_incr.norm() / nb;
  if (ratio <= 1e-9) return 1e9;
  return std::max(ratio, 1.0 / ratio);
}

// r_L = r_up/(xi_f xi_d xi_p) + r_down/(xi_f xi_d xi_p)
inline double fused_residual(double r_up, const FavorFactors& up, double r_down,
                             const FavorFactors& down) {
  return r_up * up.weight() + r_down * down.weight();
}

struct ScanMatchResult {
  Pose pose;
  Mat6 H = Mat6::Zero();  // final Gauss-Newton information matrix
  bool converged = false;
  int iterations = 0;
  double r_up = 0.0;    // per-sensor SSE at the final pose
  double r_down = 0.0;
  std::vector<Correspondence> corrs_up, corrs_down;
};

// Gauss-Newton over the 6-DoF pose minimizing the favor-weighted sum of
// squared correspondence distances (Huber-robustified). Correspondences
// are re-searched each iteration against the fixed map.
inline ScanMatchResult scan_match(const FeatureCloud& features_up,
                                  const FeatureCloud& features_down, const FeatureMap& map,
                                  const Pose& init, const FavorFactors& factors_up,
                                  const FavorFactors& factors_down, const MatchConfig& cfg = {}) {
  ScanMatchResult res;
  res.pose = init;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    res.iterations = it + 1;
    res.corrs_up = find_correspondences(features_up, map, res.pose, cfg);
    res.corrs_down = find_correspondences(features_down, map, res.pose, cfg);

    Mat6 H = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    size_t used = 0;
    auto accumulate = [&](const std::vector<Correspondence>& corrs, double w_sensor) {
      for (const auto& c : corrs) {
        const double d = c.distance(res.pose);
        double w = w_sensor;
        if (cfg.huber_delta > 0.0 && d > cfg.huber_delta) w *= cfg.huber_delta / d;
        const Vec6 j = c.jacobian(res.pose);
        H += w * j * j.transpose();
        b += w * j * d;
        ++used;
      }
    };
    accumulate(res.corrs_up, factors_up.weight());
    accumulate(res.corrs_down, factors_down.weight());

    if (used < 12) break;  // not enough structure to solve

    res.H = H;
    const Vec6 step = -H.ldlt().solve(b);
    if (!step.allFinite()) break;
    res.pose.translation += step.head<3>();
    res.pose.rotation = res.pose.rotation * so3_exp(step.tail<3>());
    if (step.norm() < cfg.step_tol) {
      res.converged = true;
      break;
    }
  }

  res.r_up = lidar_residual(res.corrs_up, res.pose);
  res.r_down = lidar_residual(res.corrs_down, res.pose);
  return res;
}

}  // namespace railfuse

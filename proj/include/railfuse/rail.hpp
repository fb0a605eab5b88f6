// Rail-track extraction from the down-view cloud: track-bed gating, dual
// RANSAC line fit, region growing along the rail heads, and the rail
// plane with its inter-frame residual.
//
// All clouds here are de-skewed and expressed in the body frame; the
// vehicle sits centered between the two rails, so the candidate strips
// live at y = +-gauge/2.

#pragma once

#include "railfuse/cloud.hpp"
#include "railfuse/geometry.hpp"

#include <Eigen/Dense>

#include <deque>
#include <random>
#include <vector>

namespace railfuse {

enum class RailStatus : uint8_t {
  kOk = 0,
  kBedNotFound,
  kLineFitFailed,
  kPlaneDegenerate,
};

struct Line3 {
  Vec3 point = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();  // unit

  double distance(const Vec3& p) const { return ((p - point).cross(direction)).norm(); }
  double arclength(const Vec3& p) const { return (p - point).dot(direction); }
};

struct RailTracks {
  std::vector<CloudPoint> left, right;
  Line3 left_line, right_line;
  double gauge_est = 0.0;
  RailStatus status = RailStatus::kOk;
};

struct RailPlane {
  Vec3 n_p = Vec3::UnitZ();  // unit, upward
  double d_p = 0.0;          // plane: n_p . x + d_p = 0
  int support_count = 0;
  RailStatus status = RailStatus::kOk;

  Eigen::Vector4d m() const { return { n_p.x(), n_p.y(), n_p.z(), d_p }; }
  double signed_distance(const Vec3& x) const { return n_p.dot(x) + d_p; }
};

struct RailConfig {
  double gauge = 1.435;            // m
  double mount_height = 1.8;       // m, sensor above railhead plane
  double bed_band = 0.45;          // m, z tolerance around the bed
  double strip_halfwidth = 0.25;   // m, lateral candidate strip
  double head_band = 0.05;         // m, local-max height band per x bin
  double x_min = 1.5, x_max = 25.0;
  int min_bed_points = 50;
  int min_strip_points = 10;
  double ransac_line_dist = 0.05;
  int ransac_iters = 200;
  double min_inlier_ratio = 0.3;
  double grow_line_dist = 0.07;    // rail head width
  double grow_radius = 0.3;        // neighbor connectivity
  double seed_ahead = 3.0;         // m
  double max_track_length = 20.0;  // m
  double plane_inlier_dist = 0.02;
  int min_rail_points = 20;
  uint64_t seed = 7;
};

struct TrackBedCandidates {
  std::vector<CloudPoint> left, right;
  int bed_point_count = 0;
  RailStatus status = RailStatus::kOk;
};

// Gate the cloud to the geometric track-bed band below the sensor and
// keep, per lateral strip around each expected rail, the locally highest
// points over the bed.
inline TrackBedCandidates detect_track_bed(const std::vector<CloudPoint>& cloud,
                                           const RailConfig& cfg = {}) {
  TrackBedCandidates out;
  const double bed_z = -cfg.mount_height;

  std::vector<const CloudPoint*> bed;
  for (const auto& pt : cloud) {
    if (pt.p.x() < cfg.x_min || pt.p.x() > cfg.x_max) continue;
    if (std::abs(pt.p.y()) > cfg.gauge) continue;
    if (std::abs(pt.p.z() - bed_z) > cfg.bed_band) continue;
    bed.push_back(&pt);
  }
  out.bed_point_count = static_cast<int>(bed.size());
  if (out.bed_point_count < cfg.min_bed_points) {
    out.status = RailStatus::kBedNotFound;
    return out;
  }

  const double bin = 0.5;
  auto collect = [&](double strip_center, std::vector<CloudPoint>& dst) {
    std::unordered_map<int, double> bin_max;
    std::vector<std::pair<int, const CloudPoint*>> strip;
    for (const auto* pt : bed) {
      if (std::abs(pt->p.y() - strip_center) > cfg.strip_halfwidth) continue;
      const int b = static_cast<int>(std::floor(pt->p.x() / bin));
      strip.emplace_back(b, pt);
      auto it = bin_max.find(b);
      if (it == bin_max.end() || pt->p.z() > it->second) bin_max[b] = pt->p.z();
    }
    for (const auto& [b, pt] : strip) {
      if (pt->p.z() >= bin_max[b] - cfg.head_band) dst.push_back(*pt);
    }
  };
  collect(+cfg.gauge / 2.0, out.left);
  collect(-cfg.gauge / 2.0, out.right);
  return out;
}

namespace detail {

inline Line3 refine_line(const std::vector<CloudPoint>& pts, const std::vector<int>& inliers) {
  Vec3 c = Vec3::Zero();
  for (int i : inliers) c += pts[i].p;
  c /= static_cast<double>(inliers.size());
  Mat3 cov = Mat3::Zero();
  for (int i : inliers) {
    const Vec3 d = pts[i].p - c;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Line3 l;
  l.point = c;
  l.direction = es.eigenvectors().col(2);
  if (l.direction.x() < 0) l.direction = -l.direction;  // forward
  return l;
}

inline bool ransac_line(const std::vector<CloudPoint>& pts, const RailConfig& cfg, uint64_t seed,
                        Line3& out) {
  if (static_cast<int>(pts.size()) < cfg.min_strip_points) return false;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, pts.size() - 1);
  int best = -1;
  std::vector<int> best_inliers;
  for (int it = 0; it < cfg.ransac_iters; ++it) {
    const size_t a = pick(rng), b = pick(rng);
    if (a == b) continue;
    const Vec3 d = pts[b].p - pts[a].p;
    const double dn = d.norm();
    if (dn < 0.2) continue;  // too short a baseline
    Line3 l{ pts[a].p, d / dn };
    std::vector<int> inliers;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (l.distance(pts[i].p) <= cfg.ransac_line_dist) inliers.push_back(static_cast<int>(i));
    }
    if (static_cast<int>(inliers.size()) > best) {
      best = static_cast<int>(inliers.size());
      best_inliers = std::move(inliers);
    }
  }
  if (best < cfg.min_strip_points ||
      best < cfg.min_inlier_ratio * static_cast<double>(pts.size())) {
    return false;
  }
  out = refine_line(pts, best_inliers);
  return true;
}

}  // namespace detail

// Fit one 3D line per candidate strip with a fixed-seed 2-point RANSAC,
// refined by least squares over the inliers.
inline RailTracks fit_rail_lines(const TrackBedCandidates& candidates, const RailConfig& cfg = {}) {
  RailTracks out;
  if (candidates.status != RailStatus::kOk) {
    out.status = candidates.status;
    return out;
  }
  const bool left_ok = detail::ransac_line(candidates.left, cfg, cfg.seed, out.left_line);
  const bool right_ok = detail::ransac_line(candidates.right, cfg, cfg.seed + 1, out.right_line);
  if (!left_ok || !right_ok) {
    out.status = RailStatus::kLineFitFailed;
    return out;
  }
  for (const auto& pt : candidates.left) {
    if (out.left_line.distance(pt.p) <= cfg.ransac_line_dist) out.left.push_back(pt);
  }
  for (const auto& pt : candidates.right) {
    if (out.right_line.distance(pt.p) <= cfg.ransac_line_dist) out.right.push_back(pt);
  }
  const Vec3 between = out.right_line.point - out.left_line.point;
  out.gauge_est = (between - between.dot(out.left_line.direction) * out.left_line.direction).norm();
  return out;
}

// Region growing: from seeds within seed_ahead of the sensor, add
// neighbors (radius grow_radius) lying within grow_line_dist of the
// fitted line, clipped to max_track_length of longitudinal extent.
inline RailTracks grow_rail_points(const std::vector<CloudPoint>& cloud, const RailTracks& tracks,
                                   const RailConfig& cfg = {}) {
  RailTracks out = tracks;
  if (tracks.status != RailStatus::kOk) return out;

  auto grow_one = [&](const Line3& line, std::vector<CloudPoint>& dst) {
    std::vector<int> members;  // indices into cloud
    std::vector<char> in_set(cloud.size(), 0);
    std::unordered_map<int64_t, std::vector<uint32_t>> grid;
    for (size_t i = 0; i < cloud.size(); ++i) {
      grid[detail::voxel_key(cloud[i].p, cfg.grow_radius)].push_back(static_cast<uint32_t>(i));
    }
    const double s0 = line.arclength(Vec3(0, 0, 0));
    std::deque<int> queue;
    for (size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud[i].p;
      if (p.x() > cfg.seed_ahead || p.x() < 0.0) continue;
      if (line.distance(p) > cfg.grow_line_dist) continue;
      queue.push_back(static_cast<int>(i));
      in_set[i] = 1;
    }
    while (!queue.empty()) {
      const int i = queue.front();
      queue.pop_front();
      members.push_back(i);
      const auto base = detail::voxel_cell(cloud[i].p, cfg.grow_radius);
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find(detail::voxel_key(base.x() + dx, base.y() + dy, base.z() + dz));
            if (it == grid.end()) continue;
            for (uint32_t j : it->second) {
              if (in_set[j]) continue;
              if ((cloud[j].p - cloud[i].p).norm() > cfg.grow_radius) continue;
              if (line.distance(cloud[j].p) > cfg.grow_line_dist) continue;
              if (line.arclength(cloud[j].p) - s0 > cfg.max_track_length) continue;
              in_set[j] = 1;
              queue.push_back(static_cast<int>(j));
            }
          }
        }
      }
    }
    dst.clear();
    dst.reserve(members.size());
    std::sort(members.begin(), members.end());
    for (int i : members) dst.push_back(cloud[i]);
  };

  grow_one(tracks.left_line, out.left);
  grow_one(tracks.right_line, out.right);
  return out;
}

// RANSAC plane through both rail point sets, normal up, least-squares
// refined; degenerate when one rail is missing or the lateral spread is
// too thin to pin the roll.
inline RailPlane fit_rail_plane(const RailTracks& tracks, const RailConfig& cfg = {}) {
  RailPlane out;
  if (tracks.status != RailStatus::kOk) {
    out.status = tracks.status == RailStatus::kBedNotFound ? RailStatus::kBedNotFound
                                                           : RailStatus::kPlaneDegenerate;
    return out;
  }
  if (static_cast<int>(tracks.left.size()) < cfg.min_rail_points ||
      static_cast<int>(tracks.right.size()) < cfg.min_rail_points) {
    out.status = RailStatus::kPlaneDegenerate;
    return out;
  }

  std::vector<CloudPoint> pts = tracks.left;
  pts.insert(pts.end(), tracks.right.begin(), tracks.right.end());

  std::mt19937_64 rng(cfg.seed + 2);
  std::uniform_int_distribution<size_t> pick(0, pts.size() - 1);
  std::vector<int> best_inliers;
  for (int it = 0; it < cfg.ransac_iters; ++it) {
    const size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Vec3 n = (pts[b].p - pts[a].p).cross(pts[c].p - pts[a].p);
    const double nn = n.norm();
    if (nn < 1e-6) continue;
    const Vec3 un = n / nn;
    std::vector<int> inliers;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (std::abs(un.dot(pts[i].p - pts[a].p)) <= cfg.plane_inlier_dist) {
        inliers.push_back(static_cast<int>(i));
      }
    }
    if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
  }
  if (static_cast<int>(best_inliers.size()) < 2 * cfg.min_rail_points) {
    out.status = RailStatus::kPlaneDegenerate;
    return out;
  }

  Vec3 centroid = Vec3::Zero();
  for (int i : best_inliers) centroid += pts[i].p;
  centroid /= static_cast<double>(best_inliers.size());
  Mat3 cov = Mat3::Zero();
  for (int i : best_inliers) {
    const Vec3 d = pts[i].p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  // thin lateral spread means a single line, not a plane
  const double mid_spread = std::sqrt(es.eigenvalues()(1) / best_inliers.size());
  if (mid_spread < 0.15) {
    out.status = RailStatus::kPlaneDegenerate;
    return out;
  }
  Vec3 n = es.eigenvectors().col(0);
  if (n.z() < 0) n = -n;
  out.n_p = n.normalized();
  out.d_p = -out.n_p.dot(centroid);
  out.support_count = static_cast<int>(best_inliers.size());
  return out;
}

// Ground-plane residual between consecutive frames. T maps points from
// frame k to frame k+1; a plane (n, d) then maps as n' = R n,
// d' = d - n'.t so that transformed points satisfy the transformed plane.
inline Eigen::Vector4d plane_residual(const RailPlane& m_k, const RailPlane& m_k1,
                                      const Pose& T_rel) {
  const Mat3 R = T_rel.rotation.matrix();
  const Vec3 n_pred = R * m_k.n_p;
  const double d_pred = m_k.d_p - n_pred.dot(T_rel.translation);
  Eigen::Vector4d r;
  r.head<3>() = m_k1.n_p - n_pred;
  r(3) = m_k1.d_p - d_pred;
  return r;
}

}  // namespace railfuse

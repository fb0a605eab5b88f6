// Raw scan container and the denoising/de-skew stages that run before
// feature extraction: close-point removal, occupancy-grid outlier filter
// for sun flicker, hidden-sector filter for boundary bleeding, and
// motion de-skew by increment interpolation.

#pragma once

#include "railfuse/geometry.hpp"
#include "railfuse/preintegration.hpp"

#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace railfuse {

enum class LidarId : uint8_t { kUpView = 0, kDownView = 1 };

// Simulator ground-truth tags; zero for regular returns. Carried through
// the filters so tests can score recall/precision.
enum class PointLabel : uint8_t {
  kNone = 0,
  kGround = 1,
  kRailHead = 2,
  kPole = 3,
  kWire = 4,
  kStructure = 5,
  kCrease = 6,
  kSunFlicker = 7,
  kBleed = 8,
};

struct CloudPoint {
  Vec3 p = Vec3::Zero();
  float intensity = 0.0f;
  double t_offset = 0.0;  // s within the frame
  PointLabel label = PointLabel::kNone;
};

struct RawScan {
  std::vector<CloudPoint> points;
  LidarId lidar_id = LidarId::kUpView;
  double frame_time = 0.0;    // s, frame end
  double frame_period = 0.1;  // s

  size_t size() const { return points.size(); }
};

struct FilterConfig {
  double r_min = 1.0;              // m, close-point cutoff
  double grid_cell = 1.0;          // m
  int grid_min_count = 3;
  double hidden_angle_phi = 3.0 * M_PI / 180.0;  // rad
  double hidden_radius_d = 0.5;    // m
  double curvature_edge_thresh = 0.5;
  double curvature_planar_thresh = 0.05;

  bool valid() const {
    return r_min > 0 && grid_cell > 0 && grid_min_count > 0 && hidden_angle_phi > 0 &&
           hidden_angle_phi < M_PI_2 && hidden_radius_d > 0 && curvature_edge_thresh > 0 &&
           curvature_planar_thresh > 0;
  }
};

namespace detail {

inline int64_t voxel_key(int64_t ix, int64_t iy, int64_t iz) {
  const auto m = [](int64_t v) { return v & 0x1fffff; };  // 21-bit wrap
  return (m(ix) << 42) | (m(iy) << 21) | m(iz);
}

inline Eigen::Vector3i voxel_cell(const Vec3& p, double cell) {
  return { static_cast<int>(std::floor(p.x() / cell)), static_cast<int>(std::floor(p.y() / cell)),
           static_cast<int>(std::floor(p.z() / cell)) };
}

inline int64_t voxel_key(const Vec3& p, double cell) {
  const auto c = voxel_cell(p, cell);
  return voxel_key(c.x(), c.y(), c.z());
}

}  // namespace detail

// Retains points with range >= r_min (closed boundary).
inline RawScan remove_close_points(const RawScan& scan, double r_min) {
  if (!(r_min > 0.0)) throw std::invalid_argument("remove_close_points: r_min <= 0");
  RawScan out = scan;
  out.points.clear();
  out.points.reserve(scan.points.size());
  for (const auto& pt : scan.points) {
    if (pt.p.norm() >= r_min) out.points.push_back(pt);
  }
  return out;
}

// Drops every point of any voxel cell holding fewer than min_count points.
inline RawScan grid_outlier_filter(const RawScan& scan, double cell, int min_count) {
  if (!(cell > 0.0)) throw std::invalid_argument("grid_outlier_filter: cell <= 0");
  std::unordered_map<int64_t, int> counts;
  counts.reserve(scan.points.size());
  for (const auto& pt : scan.points) ++counts[detail::voxel_key(pt.p, cell)];
  RawScan out = scan;
  out.points.clear();
  out.points.reserve(scan.points.size());
  for (const auto& pt : scan.points) {
    if (counts[detail::voxel_key(pt.p, cell)] >= min_count) out.points.push_back(pt);
  }
  return out;
}

// Discards any point lying inside another point's hidden sector: the cone
// of half-angle phi around the sensor->point axis, apex at the point,
// opening away from the sensor, truncated at radius d. This removes the
// stretched bleeding returns between close foreground/background surfaces
// while real surfaces survive (they sit well off the grazing axis).
inline RawScan hidden_sector_filter(const RawScan& scan, double phi, double d) {
  if (!(phi > 0.0 && phi < M_PI_2)) throw std::invalid_argument("hidden_sector_filter: bad phi");
  if (!(d > 0.0)) throw std::invalid_argument("hidden_sector_filter: d <= 0");

  const double cos_phi = std::cos(phi);
  const size_t n = scan.points.size();

  std::unordered_map<int64_t, std::vector<uint32_t>> grid;
  grid.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    grid[detail::voxel_key(scan.points[i].p, d)].push_back(static_cast<uint32_t>(i));
  }

  std::vector<char> removed(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const Vec3& q = scan.points[i].p;
    const Eigen::Vector3i base = detail::voxel_cell(q, d);
    bool shadowed = false;
    for (int dx = -1; dx <= 1 && !shadowed; ++dx) {
      for (int dy = -1; dy <= 1 && !shadowed; ++dy) {
        for (int dz = -1; dz <= 1 && !shadowed; ++dz) {
          const auto it = grid.find(detail::voxel_key(base.x() + dx, base.y() + dy, base.z() + dz));
          if (it == grid.end()) continue;
          for (uint32_t j : it->second) {
            if (j == i) continue;
            const Vec3& p = scan.points[j].p;
            const double pn = p.norm();
            if (pn < 1e-9) continue;
            const Vec3 w = q - p;
            const double wn = w.norm();
            if (wn > d || wn < 1e-12) continue;
            const double along = w.dot(p) / pn;
            if (along <= 0.0) continue;        // only beyond the caster
            if (along >= wn * cos_phi) {       // inside the cone
              shadowed = true;
              break;
            }
          }
        }
      }
    }
    removed[i] = shadowed;
  }

  RawScan out = scan;
  out.points.clear();
  out.points.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (!removed[i]) out.points.push_back(scan.points[i]);
  }
  return out;
}

// Transforms every point into the frame-end body frame, interpolating the
// in-frame motion linearly in translation and spherically in rotation.
// `motion` is the pose of the frame-end body expressed in the frame-start
// body frame.
inline RawScan deskew(const RawScan& scan, const Pose& motion, double frame_period) {
  if (!(frame_period > 0.0)) throw std::invalid_argument("deskew: frame_period <= 0");
  const Pose end_inv = motion.inverse();
  RawScan out = scan;
  for (auto& pt : out.points) {
    if (pt.t_offset < -1e-9 || pt.t_offset > frame_period + 1e-9) {
      throw std::invalid_argument("deskew: t_offset outside the frame span");
    }
    const double s = std::clamp(pt.t_offset / frame_period, 0.0, 1.0);
    const Pose at_t = interpolate(Pose::identity(), motion, s);
    pt.p = end_inv * (at_t * pt.p);
    pt.t_offset = frame_period;
  }
  return out;
}

// Convenience overload reading the frame motion straight off a delta that
// spans the frame (gravity-compensated increments: gamma for rotation,
// alpha for translation).
inline RawScan deskew(const RawScan& scan, const PreintegratedDelta& delta) {
  if (!(delta.dt_total > 0.0)) throw std::invalid_argument("deskew: empty delta span");
  return deskew(scan, Pose(delta.gamma, delta.alpha), delta.dt_total);
}

}  // namespace railfuse

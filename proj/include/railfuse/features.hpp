// Curvature-based edge/planar feature extraction over the sampling order
// of a denoised, de-skewed scan, plus the failure detection factor fed by
// the per-frame feature counts.

#pragma once

#include "railfuse/cloud.hpp"
#include "railfuse/geometry.hpp"

#include <algorithm>
#include <vector>

namespace railfuse {

struct FeatureCloud {
  std::vector<CloudPoint> edges;    // high curvature
  std::vector<CloudPoint> planars;  // low curvature
  int n_edge = 0;
  int n_planar = 0;
  LidarId lidar_id = LidarId::kUpView;
  double frame_time = 0.0;
  Pose pose_hint;
};

struct FeatureConfig {
  double edge_thresh = 0.2;    // normalized smoothness, scale-free
  double planar_thresh = 0.02;
  int max_edges = 300;         // per-scan caps, strongest first
  int max_planars = 600;
  int sectors = 6;             // azimuth sectors for spatial spread
  int half_window = 5;         // curvature neighborhood half width
  double occlusion_gap = 0.3;  // relative range jump marking an occlusion
};

// Smoothness over the 2*half_window sampling-order neighborhood,
// normalized by the neighborhood extent so the score is independent of
// range and angular resolution: 0 on straight runs, O(1) at creases and
// depth discontinuities.
//
// Sampling-order breaks (the scan pattern jumping to a new line) are
// detected from the ray-direction step and blanked; at range jumps only
// the near side may produce edges, the occluded side is suppressed.
inline FeatureCloud extract_features(const RawScan& scan, const FeatureConfig& cfg = {}) {
  FeatureCloud out;
  out.lidar_id = scan.lidar_id;
  out.frame_time = scan.frame_time;

  const int n = static_cast<int>(scan.points.size());
  const int hw = cfg.half_window;
  if (n < 2 * hw + 1) return out;

  std::vector<double> range(n);
  std::vector<Vec3> dir(n);
  for (int i = 0; i < n; ++i) {
    range[i] = scan.points[i].p.norm();
    dir[i] = range[i] > 1e-9 ? Vec3(scan.points[i].p / range[i]) : Vec3::UnitX();
  }

  std::vector<double> step(std::max(0, n - 1));
  for (int i = 0; i + 1 < n; ++i) step[i] = (dir[i + 1] - dir[i]).norm();
  std::vector<double> sorted_steps = step;
  std::nth_element(sorted_steps.begin(), sorted_steps.begin() + sorted_steps.size() / 2,
                   sorted_steps.end());
  const double median_step = sorted_steps.empty() ? 0.0 : sorted_steps[sorted_steps.size() / 2];

  std::vector<char> blanked(n, 0);       // no feature of either kind
  std::vector<char> edge_blocked(n, 0);  // occluded side of a range jump
  for (int i = 0; i + 1 < n; ++i) {
    if (step[i] > std::max(5.0 * median_step, 1e-4)) {
      for (int j = std::max(0, i - hw + 1); j <= std::min(n - 1, i + hw); ++j) blanked[j] = 1;
      continue;
    }
    const double jump = range[i + 1] - range[i];
    if (std::abs(jump) > cfg.occlusion_gap * std::min(range[i], range[i + 1])) {
      if (jump > 0) {
        for (int j = i + 1; j <= std::min(n - 1, i + hw); ++j) edge_blocked[j] = 1;
      } else {
        for (int j = std::max(0, i - hw + 1); j <= i; ++j) edge_blocked[j] = 1;
      }
    }
  }

  struct Scored {
    int idx;
    double curvature;
    int sector;
  };
  std::vector<Scored> scored;
  scored.reserve(n);
  for (int i = hw; i < n - hw; ++i) {
    if (blanked[i]) continue;
    const Vec3& pi = scan.points[i].p;
    Vec3 sum = Vec3::Zero();
    double extent = 0.0;
    for (int j = -hw; j <= hw; ++j) {
      if (j == 0) continue;
      const Vec3 d = scan.points[i + j].p - pi;
      sum += d;
      extent += d.norm();
    }
    const double c = sum.norm() / std::max(extent, 1e-12);
    const double az = std::atan2(pi.y(), pi.x());
    const int sector =
        std::min(cfg.sectors - 1, static_cast<int>((az + M_PI) / (2.0 * M_PI) * cfg.sectors));
    scored.push_back({ i, c, sector });
  }

  const int edge_cap = std::max(1, cfg.max_edges / cfg.sectors);
  const int planar_cap = std::max(1, cfg.max_planars / cfg.sectors);
  std::vector<int> edge_taken(cfg.sectors, 0), planar_taken(cfg.sectors, 0);
  std::vector<char> suppressed(n, 0);

  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    return a.curvature > b.curvature || (a.curvature == b.curvature && a.idx < b.idx);
  });
  for (const auto& s : scored) {
    if (s.curvature <= cfg.edge_thresh) break;
    if (suppressed[s.idx] || edge_blocked[s.idx] || edge_taken[s.sector] >= edge_cap) continue;
    out.edges.push_back(scan.points[s.idx]);
    ++edge_taken[s.sector];
    for (int j = std::max(0, s.idx - hw); j <= std::min(n - 1, s.idx + hw); ++j) suppressed[j] = 1;
  }

  std::fill(suppressed.begin(), suppressed.end(), 0);
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    return a.curvature < b.curvature || (a.curvature == b.curvature && a.idx < b.idx);
  });
  for (const auto& s : scored) {
    if (s.curvature >= cfg.planar_thresh) break;
    if (suppressed[s.idx] || planar_taken[s.sector] >= planar_cap) continue;
    out.planars.push_back(scan.points[s.idx]);
    ++planar_taken[s.sector];
    // lighter suppression keeps the planar set dense enough for matching
    for (int j = std::max(0, s.idx - 2); j <= std::min(n - 1, s.idx + 2); ++j) suppressed[j] = 1;
  }

  out.n_edge = static_cast<int>(out.edges.size());
  out.n_planar = static_cast<int>(out.planars.size());
  return out;
}

// Failure detection factor: 1 when both feature counts clear their
// thresholds, 100 when both fall short, 50 otherwise.
inline int failure_factor(int n_edge, int n_planar, double e_eps, double e_rho) {
  if (n_edge > e_eps && n_planar > e_rho) return 1;
  if (n_edge < e_eps && n_planar < e_rho) return 100;
  return 50;
}

}  // namespace railfuse

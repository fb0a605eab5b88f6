// Cartesian height descriptor: per-bin maximum point height over a fixed
// rectangle ahead of the vehicle, compared row-by-row (rows run across
// the lateral axis at fixed longitudinal x) with cosine distance. Row
// shifts therefore correspond to longitudinal displacement, which is what
// the matching below extracts.

#pragma once

#include "railfuse/cloud.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>

namespace railfuse {

struct DescriptorConfig {
  double x_min = 3.0, x_max = 33.0;    // m
  double y_min = -20.0, y_max = 20.0;  // m
  double bin = 0.5;                    // m, square bins

  int rows() const { return static_cast<int>(std::round((x_max - x_min) / bin)); }
  int cols() const { return static_cast<int>(std::round((y_max - y_min) / bin)); }
};

struct HeightDescriptor {
  Eigen::MatrixXd grid;  // rows x cols, max height above ground, >= 0
  DescriptorConfig cfg;
};

// ground_z: reference height of the ground in the cloud's frame (the rail
// plane height when available, else the sensor mounting height).
inline HeightDescriptor build_height_descriptor(const std::vector<CloudPoint>& cloud,
                                                double ground_z,
                                                const DescriptorConfig& cfg = {}) {
  HeightDescriptor d;
  d.cfg = cfg;
  d.grid = Eigen::MatrixXd::Zero(cfg.rows(), cfg.cols());
  for (const auto& pt : cloud) {
    if (pt.p.x() < cfg.x_min || pt.p.x() >= cfg.x_max) continue;
    if (pt.p.y() < cfg.y_min || pt.p.y() >= cfg.y_max) continue;
    const double h = pt.p.z() - ground_z;
    if (h <= 0.0) continue;
    const int r = static_cast<int>((pt.p.x() - cfg.x_min) / cfg.bin);
    const int c = static_cast<int>((pt.p.y() - cfg.y_min) / cfg.bin);
    d.grid(r, c) = std::max(d.grid(r, c), h);
  }
  return d;
}

// Mean over rows of (1 - cos) between matching rows. Row pairs where both
// norms vanish contribute 0 (no evidence is not disagreement); pairs
// where exactly one vanishes contribute 1.
inline double descriptor_residual(const HeightDescriptor& a, const HeightDescriptor& b) {
  if (a.grid.rows() != b.grid.rows() || a.grid.cols() != b.grid.cols()) {
    throw std::invalid_argument("descriptor_residual: shape mismatch");
  }
  const int n = static_cast<int>(a.grid.rows());
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double na = a.grid.row(i).norm();
    const double nb = b.grid.row(i).norm();
    if (na == 0.0 && nb == 0.0) continue;
    if (na == 0.0 || nb == 0.0) {
      sum += 1.0;
      continue;
    }
    sum += std::max(0.0, 1.0 - a.grid.row(i).dot(b.grid.row(i)) / (na * nb));
  }
  return sum / n;
}

struct DescriptorMatch {
  double displacement = 0.0;  // m; b ~= a shifted forward by this amount
  double score = 0.0;         // residual at the best shift
  int overlap_rows = 0;
};

// Search integer row shifts for the displacement between two descriptors:
// if the vehicle advanced by dx, content of b sits dx/bin rows lower than
// in a. Returns nullopt when no shift has enough overlapping support or
// the best score is not distinctive. Sub-bin refinement by parabola.
inline std::optional<DescriptorMatch> match_descriptors(const HeightDescriptor& a,
                                                        const HeightDescriptor& b,
                                                        int max_shift_bins,
                                                        double max_score = 0.35,
                                                        int min_overlap = 12) {
  if (a.grid.rows() != b.grid.rows() || a.grid.cols() != b.grid.cols()) {
    throw std::invalid_argument("match_descriptors: shape mismatch");
  }
  const int n = static_cast<int>(a.grid.rows());
  max_shift_bins = std::min(max_shift_bins, n - min_overlap);

  // score(s): rows a[i+s] vs b[i] over the overlap, counting only rows
  // where at least one side has content
  auto score_at = [&](int s, int& overlap) {
    double sum = 0.0;
    int used = 0;
    for (int i = 0; i < n; ++i) {
      const int j = i + s;
      if (j < 0 || j >= n) continue;
      const double na = a.grid.row(j).norm();
      const double nb = b.grid.row(i).norm();
      if (na == 0.0 && nb == 0.0) continue;
      ++used;
      if (na == 0.0 || nb == 0.0) {
        sum += 1.0;
        continue;
      }
      sum += std::max(0.0, 1.0 - a.grid.row(j).dot(b.grid.row(i)) / (na * nb));
    }
    overlap = used;
    return used > 0 ? sum / used : 2.0;
  };

  // scan outward from zero so periodic structure resolves to the
  // smallest displacement consistent with the data
  int best_s = 0, best_overlap = 0;
  double best = 2.0;
  for (int k = 0; k <= 2 * max_shift_bins; ++k) {
    const int s = (k % 2 == 0) ? k / 2 : -(k + 1) / 2;
    int overlap = 0;
    const double v = score_at(s, overlap);
    if (overlap >= min_overlap && v < best - 1e-9) {
      best = v;
      best_s = s;
      best_overlap = overlap;
    }
  }
  if (best_overlap < min_overlap || best > max_score) return std::nullopt;

  // parabola through the neighbors for sub-bin resolution
  int o;
  const double ym = score_at(best_s - 1, o), y0 = best, yp = score_at(best_s + 1, o);
  double frac = 0.0;
  const double denom = ym - 2.0 * y0 + yp;
  if (denom > 1e-12) frac = std::clamp(0.5 * (ym - yp) / denom, -0.5, 0.5);

  DescriptorMatch m;
  m.displacement = (best_s + frac) * a.cfg.bin;
  m.score = best;
  m.overlap_rows = best_overlap;
  return m;
}

}  // namespace railfuse

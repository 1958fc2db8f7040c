#pragma once

#include "comet/data.hpp"

#include <algorithm>
#include <vector>

namespace comet::testing {

// Brute-force pooled PR area: count selections by direct comparison at every
// threshold, order by recall, sum rectangles. Among points of equal recall the
// highest threshold comes first, where recall first reaches that level.
inline double pxap_oracle(const std::vector<AttributionMap>& maps, const std::vector<Mask>& gts, int n) {
  struct Pt {
    double recall, precision, tau;
  };
  std::vector<Pt> pts;
  long long total_pos = 0;
  for (const auto& g : gts) total_pos += g.count();
  for (int k = 0; k <= n; ++k) {
    const double tau = static_cast<double>(k) / n;
    long long sel = 0, tp = 0;
    for (std::size_t i = 0; i < maps.size(); ++i)
      for (Index r = 0; r < maps[i].rows(); ++r)
        for (Index c = 0; c < maps[i].cols(); ++c)
          if (maps[i](r, c) >= tau) {
            ++sel;
            if (gts[i](r, c)) ++tp;
          }
    pts.push_back({static_cast<double>(tp) / static_cast<double>(total_pos),
                   sel ? static_cast<double>(tp) / static_cast<double>(sel) : 1.0, tau});
  }
  std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
    return a.recall != b.recall ? a.recall < b.recall : a.tau > b.tau;
  });
  double area = 0.0, prev = 0.0;
  for (const auto& p : pts) {
    area += (p.recall - prev) * p.precision;
    prev = p.recall;
  }
  return area;
}

inline double iou_auc_oracle(const std::vector<AttributionMap>& maps, const std::vector<Mask>& gts, int n) {
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    const double tau = static_cast<double>(k) / n;
    double mean = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      long long inter = 0, uni = 0;
      for (Index r = 0; r < maps[i].rows(); ++r)
        for (Index c = 0; c < maps[i].cols(); ++c) {
          const bool s = maps[i](r, c) >= tau, g = gts[i](r, c);
          inter += s && g;
          uni += s || g;
        }
      mean += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    }
    total += mean / static_cast<double>(maps.size());
  }
  return total / n;
}

}  // namespace comet::testing

#pragma once

#include <vector>

namespace tfpose {

/// K keypoints in normalized crop coordinates with COCO-style visibility:
/// 0 = unlabeled, 1 = labeled but occluded, 2 = labeled and visible.
/// Labeled means v > 0; only labeled keypoints are supervised or scored.
struct KeypointSet {
  std::vector<double> xy;  // K·2, (x, y) pairs
  std::vector<int> vis;    // K

  int k() const { return static_cast<int>(vis.size()); }
  double x(int i) const { return xy[2 * static_cast<std::size_t>(i)]; }
  double y(int i) const { return xy[2 * static_cast<std::size_t>(i) + 1]; }
  bool labeled(int i) const { return vis[static_cast<std::size_t>(i)] > 0; }
  int labeled_count() const {
    int n = 0;
    for (int v : vis) n += v > 0 ? 1 : 0;
    return n;
  }
};

}  // namespace tfpose

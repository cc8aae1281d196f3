#pragma once

#include <string>
#include <vector>

#include "tfpose/keypoints.hpp"
#include "tfpose/losses.hpp"

namespace tfpose {

struct OksConfig {
  /// Per-keypoint falloff constants k_i of exp(-d²/(2·area·k_i²)).
  std::vector<double> k;

  static OksConfig uniform(int keypoints, double value);
  /// Loads a JSON array of constants.
  static OksConfig from_file(const std::string& path);
};

struct EvalReport {
  double mean_oks = 0;
  double ap = 0;  // mean precision over thresholds 0.50:0.05:0.95
  double ap50 = 0;
  double ap75 = 0;
  double pck = 0;
  std::vector<double> pck_per_keypoint;

  std::string to_json() const;
};

struct DecodedHeatmap {
  KeypointSet keypoints;
  std::vector<bool> degenerate;  // channel was all zero
};

/// Argmax decode: per channel the peak cell's center in normalized crop
/// coordinates; ties break to the smallest row-major index. An all-zero
/// channel decodes to cell (0,0) and is flagged degenerate.
DecodedHeatmap heatmap_decode(const std::vector<double>& maps, int h, int w, int k);

template <typename T>
DecodedHeatmap heatmap_decode(const Heatmap<T>& hm);

/// Standard object keypoint similarity over labeled keypoints. Throws when no
/// keypoint is labeled (callers skip and count such instances).
double oks(const KeypointSet& pred, const KeypointSet& gt, double area, const OksConfig& cfg);

struct ApResult {
  std::vector<double> thresholds;
  std::vector<double> precision;  // fraction of pairs with OKS >= threshold
  double ap = 0;                  // mean over thresholds
};

std::vector<double> default_oks_thresholds();

/// Identity-matched AP: one prediction per ground truth (top-down setting).
ApResult ap_over_oks(const std::vector<double>& oks_values,
                     const std::vector<double>& thresholds = default_oks_thresholds());

struct PckResult {
  std::vector<double> per_keypoint;  // labeled-keypoint rates; -1 when never labeled
  double mean = 0;
};

/// A keypoint counts as correct iff distance <= fraction · norm_length
/// (closed threshold). Distances and norm_length share the caller's units.
PckResult pck(const std::vector<KeypointSet>& preds, const std::vector<KeypointSet>& gts,
              double norm_length, double fraction);

}  // namespace tfpose

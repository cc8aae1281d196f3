#include "tfpose/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tfpose {

using json = nlohmann::json;

OksConfig OksConfig::uniform(int keypoints, double value) {
  if (value <= 0) throw std::invalid_argument("OksConfig: falloff constants must be positive");
  OksConfig cfg;
  cfg.k.assign(static_cast<std::size_t>(keypoints), value);
  return cfg;
}

OksConfig OksConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("OksConfig: cannot open " + path);
  json j = json::parse(in);
  if (!j.is_array() || j.empty()) throw std::runtime_error("OksConfig: " + path + " must hold a JSON array");
  OksConfig cfg;
  for (const auto& v : j) {
    const double x = v.get<double>();
    if (x <= 0) throw std::runtime_error("OksConfig: non-positive constant in " + path);
    cfg.k.push_back(x);
  }
  return cfg;
}

std::string EvalReport::to_json() const {
  json j;
  j["mean_oks"] = mean_oks;
  j["ap"] = ap;
  j["ap50"] = ap50;
  j["ap75"] = ap75;
  j["pck"] = pck;
  j["pck_per_keypoint"] = pck_per_keypoint;
  return j.dump(2);
}

DecodedHeatmap heatmap_decode(const std::vector<double>& maps, int h, int w, int k) {
  if (h < 1 || w < 1 || k < 1 || maps.size() != static_cast<std::size_t>(h) * w * k) {
    throw std::invalid_argument("heatmap_decode: empty or inconsistent heatmap");
  }
  DecodedHeatmap out;
  out.keypoints.xy.assign(static_cast<std::size_t>(k) * 2, 0.0);
  out.keypoints.vis.assign(static_cast<std::size_t>(k), 2);
  out.degenerate.assign(static_cast<std::size_t>(k), false);
  for (int i = 0; i < k; ++i) {
    double best = -1.0;
    int best_y = 0, best_x = 0;
    bool any_nonzero = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = maps[(static_cast<std::size_t>(y) * w + x) * k + i];
        if (v != 0.0) any_nonzero = true;
        if (v > best) {  // strict: earliest row-major cell wins ties
          best = v;
          best_y = y;
          best_x = x;
        }
      }
    }
    if (!any_nonzero) {
      best_y = 0;
      best_x = 0;
      out.degenerate[static_cast<std::size_t>(i)] = true;
    }
    out.keypoints.xy[2 * static_cast<std::size_t>(i)] = (best_x + 0.5) / w;
    out.keypoints.xy[2 * static_cast<std::size_t>(i) + 1] = (best_y + 0.5) / h;
  }
  return out;
}

template <typename T>
DecodedHeatmap heatmap_decode(const Heatmap<T>& hm) {
  std::vector<double> maps(hm.maps->value.begin(), hm.maps->value.end());
  return heatmap_decode(maps, hm.h, hm.w, hm.k);
}

double oks(const KeypointSet& pred, const KeypointSet& gt, double area, const OksConfig& cfg) {
  if (area <= 0) throw std::invalid_argument("oks: area must be positive");
  if (pred.k() != gt.k()) throw std::invalid_argument("oks: keypoint count mismatch");
  if (static_cast<int>(cfg.k.size()) != gt.k()) {
    throw std::invalid_argument("oks: falloff constant count does not match keypoints");
  }
  double sum = 0;
  int labeled = 0;
  for (int i = 0; i < gt.k(); ++i) {
    if (!gt.labeled(i)) continue;
    const double dx = pred.x(i) - gt.x(i);
    const double dy = pred.y(i) - gt.y(i);
    const double d2 = dx * dx + dy * dy;
    sum += std::exp(-d2 / (2.0 * area * cfg.k[static_cast<std::size_t>(i)] * cfg.k[static_cast<std::size_t>(i)]));
    ++labeled;
  }
  if (labeled == 0) throw std::invalid_argument("oks: no labeled keypoints");
  return sum / labeled;
}

std::vector<double> default_oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

ApResult ap_over_oks(const std::vector<double>& oks_values, const std::vector<double>& thresholds) {
  if (oks_values.empty()) throw std::invalid_argument("ap_over_oks: empty instance set");
  ApResult res;
  res.thresholds = thresholds;
  double acc = 0;
  for (double t : thresholds) {
    int hit = 0;
    for (double v : oks_values) hit += v >= t ? 1 : 0;
    const double p = static_cast<double>(hit) / oks_values.size();
    res.precision.push_back(p);
    acc += p;
  }
  res.ap = acc / thresholds.size();
  return res;
}

PckResult pck(const std::vector<KeypointSet>& preds, const std::vector<KeypointSet>& gts,
              double norm_length, double fraction) {
  if (norm_length <= 0) throw std::invalid_argument("pck: norm_length must be positive");
  if (preds.size() != gts.size()) throw std::invalid_argument("pck: instance count mismatch");
  PckResult res;
  if (preds.empty()) return res;
  const int k = gts[0].k();
  std::vector<int> correct(static_cast<std::size_t>(k), 0), labeled(static_cast<std::size_t>(k), 0);
  const double limit = fraction * norm_length;
  for (std::size_t n = 0; n < gts.size(); ++n) {
    for (int i = 0; i < k; ++i) {
      if (!gts[n].labeled(i)) continue;
      ++labeled[static_cast<std::size_t>(i)];
      const double dx = preds[n].x(i) - gts[n].x(i);
      const double dy = preds[n].y(i) - gts[n].y(i);
      if (std::sqrt(dx * dx + dy * dy) <= limit) ++correct[static_cast<std::size_t>(i)];
    }
  }
  int total_correct = 0, total_labeled = 0;
  for (int i = 0; i < k; ++i) {
    total_correct += correct[static_cast<std::size_t>(i)];
    total_labeled += labeled[static_cast<std::size_t>(i)];
    res.per_keypoint.push_back(labeled[static_cast<std::size_t>(i)] > 0
                                   ? static_cast<double>(correct[static_cast<std::size_t>(i)]) /
                                         labeled[static_cast<std::size_t>(i)]
                                   : -1.0);
  }
  res.mean = total_labeled > 0 ? static_cast<double>(total_correct) / total_labeled : 0.0;
  return res;
}

template DecodedHeatmap heatmap_decode<float>(const Heatmap<float>&);
template DecodedHeatmap heatmap_decode<double>(const Heatmap<double>&);

}  // namespace tfpose

#include <doctest.h>

#include <cmath>
#include <random>

#include "tfpose/losses.hpp"
#include "tfpose/metrics.hpp"

using namespace tfpose;

namespace {

KeypointSet kps(std::vector<double> xy, std::vector<int> vis) {
  KeypointSet k;
  k.xy = std::move(xy);
  k.vis = std::move(vis);
  return k;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("argmax decode reports the peak cell center in normalized coordinates") {
  std::vector<double> maps(64 * 48, 0.0);
  maps[3 * 48 + 5] = 1.0;  // cell (row 3, col 5)
  auto out = heatmap_decode(maps, 64, 48, 1);
  CHECK(out.keypoints.x(0) == doctest::Approx(5.5 / 48).epsilon(1e-12));
  CHECK(out.keypoints.y(0) == doctest::Approx(3.5 / 64).epsilon(1e-12));
  CHECK_FALSE(out.degenerate[0]);
}

TEST_CASE("ties break to the earliest row-major cell") {
  std::vector<double> maps(4 * 4, 0.0);
  maps[1 * 4 + 2] = 0.7;
  maps[2 * 4 + 1] = 0.7;  // later in row-major order
  auto out = heatmap_decode(maps, 4, 4, 1);
  CHECK(out.keypoints.x(0) == doctest::Approx((2 + 0.5) / 4).epsilon(1e-12));
  CHECK(out.keypoints.y(0) == doctest::Approx((1 + 0.5) / 4).epsilon(1e-12));
}

TEST_CASE("an all-zero channel decodes to the origin cell and is flagged") {
  std::vector<double> maps(3 * 3 * 2, 0.0);
  maps[(1 * 3 + 1) * 2 + 1] = 0.5;
  auto out = heatmap_decode(maps, 3, 3, 2);
  CHECK(out.degenerate[0]);
  CHECK_FALSE(out.degenerate[1]);
  CHECK(out.keypoints.x(0) == doctest::Approx(0.5 / 3).epsilon(1e-12));
  CHECK(out.keypoints.y(0) == doctest::Approx(0.5 / 3).epsilon(1e-12));
}

TEST_CASE("decode of a synthesized heatmap lands within half a cell") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = 16, w = 12;
  for (int trial = 0; trial < 100; ++trial) {
    auto target = kps({u(rng), u(rng)}, {2});
    auto hm = make_gt_heatmap<double>(target, h, w, 2.0);
    auto decoded = heatmap_decode(hm);
    CHECK(std::abs(decoded.keypoints.x(0) - target.x(0)) <= 0.5 / w + 1e-12);
    CHECK(std::abs(decoded.keypoints.y(0) - target.y(0)) <= 0.5 / h + 1e-12);
  }
}

TEST_CASE("oks of a perfect prediction is one") {
  auto gt = kps({0.2, 0.3, 0.7, 0.8}, {2, 2});
  CHECK(oks(gt, gt, 0.5, OksConfig::uniform(2, 0.1)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a squared distance of 2*area*k^2 contributes exp(-1)") {
  const double area = 0.4, k = 0.2;
  const double d = std::sqrt(2.0 * area * k * k);
  auto gt = kps({0.5, 0.5}, {2});
  auto pred = kps({0.5 + d, 0.5}, {2});
  CHECK(oks(pred, gt, area, OksConfig::uniform(1, k)) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(std::exp(-1.0) == doctest::Approx(0.3679).epsilon(1e-3));
}

TEST_CASE("oks tends to zero for far predictions and decreases with distance") {
  auto gt = kps({0.5, 0.5}, {2});
  auto cfg = OksConfig::uniform(1, 0.05);
  CHECK(oks(kps({500.0, 500.0}, {2}), gt, 0.01, cfg) == doctest::Approx(0.0).epsilon(1e-12));
  double prev = 1.1;
  for (double d = 0.0; d <= 0.2; d += 0.01) {
    const double v = oks(kps({0.5 + d, 0.5}, {2}), gt, 0.01, cfg);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("unlabeled keypoints are excluded and empty instances rejected") {
  auto gt = kps({0.5, 0.5, 0.9, 0.9}, {2, 0});
  auto pred = kps({0.5, 0.5, 0.1, 0.1}, {2, 2});
  CHECK(oks(pred, gt, 0.5, OksConfig::uniform(2, 0.1)) == doctest::Approx(1.0).epsilon(1e-12));
  auto none = kps({0.5, 0.5}, {0});
  CHECK_THROWS_AS(oks(pred, none, 0.5, OksConfig::uniform(1, 0.1)), std::invalid_argument);
}

TEST_CASE("oks is invariant to joint rescaling of coordinates and sqrt(area)") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int trial = 0; trial < 50; ++trial) {
    auto gt = kps({u(rng), u(rng), u(rng), u(rng)}, {2, 2});
    auto pred = kps({u(rng), u(rng), u(rng), u(rng)}, {2, 2});
    const double area = 0.05 + u(rng);
    const double s = 0.3 + 2.0 * u(rng);
    auto scale_kps = [&](const KeypointSet& in) {
      KeypointSet out = in;
      for (auto& v : out.xy) v *= s;
      return out;
    };
    const auto cfg = OksConfig::uniform(2, 0.1);
    const double base = oks(pred, gt, area, cfg);
    const double scaled = oks(scale_kps(pred), scale_kps(gt), area * s * s, cfg);
    CHECK(std::abs(base - scaled) < 1e-9);
  }
}

TEST_CASE("ap over thresholds matches direct counting") {
  const std::vector<double> values{0.6, 0.9};
  auto res = ap_over_oks(values, {0.75});
  CHECK(res.precision[0] == doctest::Approx(0.5).epsilon(1e-12));

  SUBCASE("perfect predictions give AP 1 at every threshold") {
    auto perfect = ap_over_oks({1.0, 1.0, 1.0});
    CHECK(perfect.ap == doctest::Approx(1.0).epsilon(1e-12));
    for (double p : perfect.precision) CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("precision is non-increasing in the threshold") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> vals;
    for (int i = 0; i < 40; ++i) vals.push_back(u(rng));
    auto res2 = ap_over_oks(vals);
    for (std::size_t i = 1; i < res2.precision.size(); ++i) {
      CHECK(res2.precision[i] <= res2.precision[i - 1] + 1e-15);
    }
  }
  SUBCASE("brute-force comparison on random sets") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<double> vals;
      const int n = 1 + static_cast<int>(u(rng) * 20);
      for (int i = 0; i < n; ++i) vals.push_back(u(rng));
      auto res3 = ap_over_oks(vals);
      double acc = 0;
      for (std::size_t t = 0; t < res3.thresholds.size(); ++t) {
        int hit = 0;
        for (double v : vals) hit += v >= res3.thresholds[t] ? 1 : 0;
        const double p = static_cast<double>(hit) / n;
        CHECK(res3.precision[t] == p);  // exact
        acc += p;
      }
      CHECK(res3.ap == doctest::Approx(acc / 10).epsilon(1e-15));
    }
  }
  SUBCASE("an empty pair list is rejected") {
    CHECK_THROWS_AS(ap_over_oks({}), std::invalid_argument);
  }
}

TEST_CASE("pck counts closed-threshold hits per keypoint") {
  auto gt = kps({0.5, 0.5, 0.2, 0.2}, {2, 2});
  const double norm = 1.0, fraction = 0.1;
  // keypoint 0 exactly at the threshold distance, keypoint 1 far away
  auto pred = kps({0.5 + fraction * norm, 0.5, 0.9, 0.9}, {2, 2});
  auto res = pck({pred}, {gt}, norm, fraction);
  CHECK(res.per_keypoint[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.per_keypoint[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.mean == doctest::Approx(0.5).epsilon(1e-12));

  SUBCASE("perfect predictions are 100 percent") {
    auto res2 = pck({gt}, {gt}, norm, fraction);
    CHECK(res2.mean == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("unlabeled keypoints report -1") {
    auto gt2 = kps({0.5, 0.5, 0.2, 0.2}, {2, 0});
    auto res3 = pck({gt2}, {gt2}, norm, fraction);
    CHECK(res3.per_keypoint[1] == doctest::Approx(-1.0));
    CHECK(res3.mean == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("eval report serializes to a flat JSON object") {
  EvalReport r;
  r.mean_oks = 0.5;
  r.ap = 0.25;
  r.ap50 = 0.5;
  r.ap75 = 0.25;
  r.pck = 0.75;
  r.pck_per_keypoint = {1.0, 0.5};
  const auto text = r.to_json();
  CHECK(text.find("\"mean_oks\"") != std::string::npos);
  CHECK(text.find("\"ap50\"") != std::string::npos);
  CHECK(text.find("\"pck_per_keypoint\"") != std::string::npos);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cmath>
#include <random>

#include "tfpose/gradcheck.hpp"
#include "tfpose/losses.hpp"
#include "tfpose/ops.hpp"
#include "tfpose/rng.hpp"

using namespace tfpose;

namespace {

PredictionBundle<double> bundle_from(const std::vector<std::vector<double>>& per_layer, int k) {
  PredictionBundle<double> b;
  for (const auto& layer : per_layer) {
    b.coords.push_back(make_tensor<double>({k, 2}, layer));
  }
  return b;
}

KeypointSet kps(std::vector<double> xy, std::vector<int> vis) {
  KeypointSet k;
  k.xy = std::move(xy);
  k.vis = std::move(vis);
  return k;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("perfect predictions give zero regression loss") {
  const std::vector<double> y{0.3, 0.4, 0.6, 0.7};
  auto b = bundle_from({y, y, y}, 2);
  auto loss = regression_loss(b, kps(y, {2, 2}));
  CHECK(loss->value[0] == 0.0);
}

TEST_CASE("one layer off by 0.1 in x with a single visible keypoint costs 0.1") {
  const std::vector<double> target{0.5, 0.5};
  auto b = bundle_from({{0.6, 0.5}, {0.5, 0.5}}, 1);
  auto loss = regression_loss(b, kps(target, {2}));
  CHECK(loss->value[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("marking the erroneous keypoint invisible removes its contribution") {
  auto b = bundle_from({{0.9, 0.9, 0.2, 0.2}}, 2);
  auto loss = regression_loss(b, kps({0.1, 0.1, 0.2, 0.2}, {0, 2}));
  CHECK(loss->value[0] == 0.0);
}

TEST_CASE("an instance without visible keypoints contributes an exact zero") {
  auto b = bundle_from({{0.9, 0.9}}, 1);
  auto loss = regression_loss(b, kps({0.1, 0.1}, {0}));
  CHECK(loss->value[0] == 0.0);
}

TEST_CASE("visibility masking off supervises every keypoint") {
  LossConfig cfg;
  cfg.visibility_masking = false;
  auto b = bundle_from({{0.9, 0.9, 0.2, 0.2}}, 2);
  auto loss = regression_loss(b, kps({0.1, 0.1, 0.2, 0.2}, {0, 2}), cfg);
  CHECK(loss->value[0] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("regression loss is nonnegative and zero only on exact matches") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> target{u(rng), u(rng), u(rng), u(rng)};
    std::vector<double> pred = target;
    pred[1] += 1e-3;
    auto b = bundle_from({pred}, 2);
    auto loss = regression_loss(b, kps(target, {2, 2}));
    CHECK(loss->value[0] > 0.0);
  }
}

TEST_CASE("ground-truth heatmap peaks at one on an exact cell center") {
  const int h = 8, w = 6;
  // keypoint at cell (row 2, col 3) center
  auto hm = make_gt_heatmap<double>(kps({(3 + 0.5) / w, (2 + 0.5) / h}, {2}), h, w, 2.0);
  CHECK(hm.maps->value[(2 * w + 3) * 1] == doctest::Approx(1.0).epsilon(1e-12));
  double mx = 0;
  for (double v : hm.maps->value) {
    CHECK(v >= 0.0);
    mx = std::max(mx, v);
  }
  CHECK(mx <= 1.0 + 1e-6);
}

TEST_CASE("one cell from the peak with sigma 2 gives exp(-1/8)") {
  const int h = 8, w = 6;
  auto hm = make_gt_heatmap<double>(kps({(3 + 0.5) / w, (2 + 0.5) / h}, {2}), h, w, 2.0);
  const double expect = std::exp(-1.0 / 8.0);
  CHECK(hm.maps->value[(2 * w + 4) * 1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(hm.maps->value[(3 * w + 3) * 1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.8825).epsilon(1e-4));
}

TEST_CASE("invisible keypoints produce all-zero channels") {
  auto hm = make_gt_heatmap<double>(kps({0.5, 0.5, 0.3, 0.3}, {0, 2}), 6, 6, 2.0);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      CHECK(hm.maps->value[(y * 6 + x) * 2 + 0] == 0.0);
    }
  }
}

TEST_CASE("the peak cell always contains the keypoint") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = 16, w = 12;
  for (int trial = 0; trial < 200; ++trial) {
    const double x = u(rng), y = u(rng);
    auto hm = make_gt_heatmap<double>(kps({x, y}, {2}), h, w, 2.0);
    int best = 0;
    for (int i = 1; i < h * w; ++i) {
      if (hm.maps->value[static_cast<std::size_t>(i)] > hm.maps->value[static_cast<std::size_t>(best)]) best = i;
    }
    const int by = best / w, bx = best % w;
    CHECK(std::abs(bx - (x * w - 0.5)) <= 0.5 + 1e-12);
    CHECK(std::abs(by - (y * h - 0.5)) <= 0.5 + 1e-12);
  }
}

TEST_CASE("aux head upsamples the C5 block by eight") {
  ModelConfig cfg;
  cfg.keypoints = 5;
  cfg.channels = 8;
  cfg.aux_channels = 8;
  ParamRegistry<double> reg;
  std::mt19937_64 rng(13);
  AuxHead<double> head(cfg, reg, rng);

  auto c5 = make_tensor<double>({8, 6, 8});
  fill_uniform(c5->value, rng, -1.0, 1.0);
  auto hm = head(c5);
  CHECK(hm.maps->shape == Shape{64, 48, 5});

  auto c5b = make_tensor<double>({12, 9, 8});
  fill_uniform(c5b->value, rng, -1.0, 1.0);
  CHECK(head(c5b).maps->shape == Shape{96, 72, 5});
}

TEST_CASE("aux head gradients pass the finite-difference check") {
  ModelConfig cfg;
  cfg.keypoints = 2;
  cfg.channels = 4;
  cfg.aux_channels = 4;
  ParamRegistry<double> reg;
  std::mt19937_64 rng(17);
  AuxHead<double> head(cfg, reg, rng);
  auto c5 = make_tensor<double>({2, 2, 4});
  fill_uniform(c5->value, rng, -1.0, 1.0);
  c5->requires_grad = true;
  auto probe = head(c5);
  std::vector<double> seed(static_cast<std::size_t>(probe.maps->size()));
  fill_uniform(seed, rng, -1.0, 1.0);
  auto forward = [&] { return weighted_sum(head(c5).maps, seed); };
  std::vector<TensorPtr<double>> inputs{c5};
  for (const auto& [name, t] : reg.items()) inputs.push_back(t);
  GradCheckOptions opt;
  opt.max_entries_per_input = 10;
  CHECK(finite_diff_check("aux_head", forward, inputs, opt).max_rel_err < 1e-3);
}

TEST_CASE("overall loss combines the two terms with lambda") {
  const std::vector<double> y{0.3, 0.4};
  auto b = bundle_from({{0.4, 0.4}}, 1);
  auto target = kps(y, {2});
  auto gt = make_gt_heatmap<double>(target, 8, 6, 2.0);

  SUBCASE("matching heatmaps leave only the regression term") {
    Heatmap<double> pred = gt;
    LossConfig cfg;
    cfg.lambda_aux = 50.0;
    auto out = overall_loss(b, target, gt, pred, cfg);
    CHECK(out.l_aux->value[0] == 0.0);
    CHECK(out.total->value[0] == doctest::Approx(out.l_reg->value[0]).epsilon(1e-12));
  }
  SUBCASE("lambda zero reduces to the regression loss exactly") {
    LossConfig cfg;
    cfg.lambda_aux = 0.0;
    Heatmap<double> none;
    auto out = overall_loss(b, target, gt, none, cfg);
    CHECK(out.total.get() == out.l_reg.get());
    CHECK(out.l_aux == nullptr);
  }
  SUBCASE("a constant offset of delta costs delta squared") {
    Heatmap<double> pred = gt;
    pred.maps = make_tensor<double>(gt.maps->shape, gt.maps->value);
    const double delta = 0.37;
    for (auto& v : pred.maps->value) v += delta;
    LossConfig cfg;
    cfg.lambda_aux = 2.0;
    auto out = overall_loss(b, target, gt, pred, cfg);
    CHECK(out.l_aux->value[0] == doctest::Approx(delta * delta).epsilon(1e-12));
    CHECK(out.total->value[0] ==
          doctest::Approx(out.l_reg->value[0] + 2.0 * delta * delta).epsilon(1e-12));
  }
  SUBCASE("mismatched heatmap shapes are rejected") {
    Heatmap<double> pred;
    pred.h = 4;
    pred.w = 6;
    pred.k = 1;
    pred.maps = make_tensor<double>({4, 6, 1});
    LossConfig cfg;
    CHECK_THROWS_AS(overall_loss(b, target, gt, pred, cfg), std::invalid_argument);
  }
}

TEST_CASE("loss gradients pass the finite-difference check") {
  std::mt19937_64 rng(19);
  auto coords = make_tensor<double>({3, 2});
  fill_uniform(coords->value, rng, 0.2, 0.8);
  coords->requires_grad = true;
  PredictionBundle<double> b;
  b.coords = {coords};
  auto target = kps({0.3, 0.3, 0.5, 0.6, 0.7, 0.2}, {2, 2, 1});

  auto pred_maps = make_tensor<double>({6, 4, 3});
  fill_uniform(pred_maps->value, rng, 0.0, 1.0);
  pred_maps->requires_grad = true;
  auto gt = make_gt_heatmap<double>(target, 6, 4, 1.5);

  auto forward = [&] {
    Heatmap<double> pred{6, 4, 3, pred_maps, 1.5};
    LossConfig cfg;
    cfg.lambda_aux = 3.0;
    return overall_loss(b, target, gt, pred, cfg).total;
  };
  GradCheckOptions opt;
  opt.max_entries_per_input = 20;
  CHECK(finite_diff_check("overall_loss", forward, {coords, pred_maps}, opt).max_rel_err < 1e-3);
}

}  // TEST_SUITE

#include <doctest.h>

#include <random>

#include "tfpose/backbone.hpp"
#include "tfpose/ops.hpp"
#include "tfpose/rng.hpp"

using namespace tfpose;

namespace {

TensorPtr<double> rand_image(int h, int w, std::mt19937_64& rng) {
  auto t = make_tensor<double>({h, w, 3});
  fill_uniform(t->value, rng, 0.0, 1.0);
  return t;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("pyramid shapes follow the stride contract") {
  ModelConfig cfg;
  cfg.backbone_widths = {4, 8, 12, 16};
  ParamRegistry<double> reg;
  std::mt19937_64 rng(1);
  ToyBackbone<double> net(cfg, reg, rng);

  struct Case {
    int h, w;
    std::vector<std::pair<int, int>> expect;  // (H, W) per level
  };
  const std::vector<Case> cases{
      {256, 192, {{64, 48}, {32, 24}, {16, 12}, {8, 6}}},
      {384, 288, {{96, 72}, {48, 36}, {24, 18}, {12, 9}}},
      {64, 64, {{16, 16}, {8, 8}, {4, 4}, {2, 2}}},
  };
  for (const auto& c : cases) {
    std::mt19937_64 img_rng(7);
    auto pyr = net(rand_image(c.h, c.w, img_rng));
    REQUIRE(pyr.levels.size() == 4);
    const int strides[4] = {4, 8, 16, 32};
    for (int l = 0; l < 4; ++l) {
      CHECK(pyr.levels[l].stride == strides[l]);
      CHECK(pyr.levels[l].map->shape ==
            Shape{c.expect[l].first, c.expect[l].second, cfg.backbone_widths[l]});
    }
  }
}

TEST_CASE("inputs not divisible by 32 are rejected") {
  ModelConfig cfg;
  cfg.backbone_widths = {4, 8, 12, 16};
  ParamRegistry<double> reg;
  std::mt19937_64 rng(2);
  ToyBackbone<double> net(cfg, reg, rng);
  std::mt19937_64 img_rng(3);
  CHECK_THROWS_AS(net(rand_image(60, 64, img_rng)), std::invalid_argument);
  CHECK_THROWS_AS(net(rand_image(64, 50, img_rng)), std::invalid_argument);
}

TEST_CASE("level projection unifies channel widths and keeps spatial dims") {
  std::mt19937_64 rng(4);
  ParamRegistry<double> reg;
  LevelProjector<double> proj({8, 128}, 256, reg, rng);
  FeaturePyramid<double> pyr;
  auto m0 = make_tensor<double>({6, 4, 8});
  auto m1 = make_tensor<double>({3, 2, 128});
  fill_uniform(m0->value, rng, -1.0, 1.0);
  fill_uniform(m1->value, rng, -1.0, 1.0);
  pyr.levels = {{4, m0}, {8, m1}};
  auto out = proj(pyr);
  CHECK(out.levels[0].map->shape == Shape{6, 4, 256});
  CHECK(out.levels[1].map->shape == Shape{3, 2, 256});
  CHECK(out.levels[0].stride == 4);
}

TEST_CASE("identity-initialized 1x1 projection reproduces the input") {
  std::mt19937_64 rng(5);
  ParamRegistry<double> reg;
  LevelProjector<double> proj({3}, 3, reg, rng);
  auto w = reg.find("input_proj.0.weight");
  REQUIRE(w != nullptr);
  std::fill(w->value.begin(), w->value.end(), 0.0);
  for (int i = 0; i < 3; ++i) w->value[static_cast<std::size_t>(i) * 3 + i] = 1.0;
  std::fill(reg.find("input_proj.0.bias")->value.begin(), reg.find("input_proj.0.bias")->value.end(), 0.0);

  FeaturePyramid<double> pyr;
  auto m = make_tensor<double>({5, 7, 3});
  fill_uniform(m->value, rng, -1.0, 1.0);
  pyr.levels = {{4, m}};
  auto out = proj(pyr);
  CHECK(out.levels[0].map->value == m->value);
}

TEST_CASE("backbone forward is deterministic") {
  ModelConfig cfg;
  cfg.backbone_widths = {4, 8, 12, 16};
  ParamRegistry<double> reg;
  std::mt19937_64 rng(6);
  ToyBackbone<double> net(cfg, reg, rng);
  std::mt19937_64 img_rng(8);
  auto img = rand_image(64, 32, img_rng);
  auto a = net(img);
  auto b = net(img);
  for (int l = 0; l < 4; ++l) CHECK(a.levels[l].map->value == b.levels[l].map->value);
}

}  // TEST_SUITE

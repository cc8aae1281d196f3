#include <doctest.h>

#include <cmath>
#include <random>

#include "tfpose/encoding.hpp"
#include "tfpose/ops.hpp"
#include "tfpose/rng.hpp"

using namespace tfpose;

namespace {

FeaturePyramid<double> fake_pyramid(const std::vector<std::pair<int, int>>& shapes, int c,
                                    std::mt19937_64& rng) {
  FeaturePyramid<double> pyr;
  int stride = 4;
  for (const auto& [h, w] : shapes) {
    auto m = make_tensor<double>({h, w, c});
    fill_uniform(m->value, rng, -1.0, 1.0);
    pyr.levels.push_back({stride, m});
    stride *= 2;
  }
  return pyr;
}

}  // namespace

TEST_SUITE("encoding") {

TEST_CASE("flatten_concat row counts match the level-area sums") {
  std::mt19937_64 rng(1);
  auto full = fake_pyramid({{64, 48}, {32, 24}, {16, 12}, {8, 6}}, 4, rng);
  auto mem = flatten_concat(full);
  CHECK(mem.n == 3072 + 768 + 192 + 48);
  CHECK(mem.n == 4080);
  CHECK(mem.features->shape == Shape{4080, 4});
  CHECK(mem.level_offsets == std::vector<int>{0, 3072, 3840, 4032, 4080});

  auto no_c2 = fake_pyramid({{32, 24}, {16, 12}, {8, 6}}, 4, rng);
  CHECK(flatten_concat(no_c2).n == 1008);
}

TEST_CASE("flatten then unflatten reproduces every level exactly") {
  std::mt19937_64 rng(2);
  auto pyr = fake_pyramid({{6, 4}, {3, 2}}, 5, rng);
  auto mem = flatten_concat(pyr);
  for (int l = 0; l < 2; ++l) {
    auto back = unflatten_level(mem, l);
    CHECK(back->shape == pyr.levels[l].map->shape);
    CHECK(back->value == pyr.levels[l].map->value);
  }
}

TEST_CASE("mismatched channel counts are rejected") {
  std::mt19937_64 rng(3);
  FeaturePyramid<double> pyr;
  auto a = make_tensor<double>({4, 4, 3});
  auto b = make_tensor<double>({2, 2, 5});
  pyr.levels = {{4, a}, {8, b}};
  CHECK_THROWS_AS(flatten_concat(pyr), std::invalid_argument);
}

TEST_CASE("position (0,0) gives zero sines and unit cosines") {
  const auto row = pos_embed_row(0.0, 0.0, 16);
  for (int j = 0; j < 16; j += 2) {
    CHECK(row[static_cast<std::size_t>(j)] == 0.0);
    CHECK(row[static_cast<std::size_t>(j) + 1] == 1.0);
  }
}

TEST_CASE("embedding rows have squared norm c/2") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int c = 24;
  for (int trial = 0; trial < 20; ++trial) {
    const auto row = pos_embed_row(u(rng), u(rng), c);
    double norm2 = 0;
    for (double v : row) norm2 += v * v;
    CHECK(norm2 == doctest::Approx(c / 2.0).epsilon(1e-6));
  }
}

TEST_CASE("channel width not divisible by 4 is rejected") {
  CHECK_THROWS_AS(pos_embed_row(0.1, 0.2, 10), std::invalid_argument);
  CHECK_THROWS_AS(pixel_pos_embedding<double>({{4, 4}}, 6), std::invalid_argument);
}

TEST_CASE("all positions of an 8x6 level embed distinctly") {
  auto pe = pixel_pos_embedding<double>({{8, 6}}, 16);
  REQUIRE(pe->shape == Shape{48, 16});
  for (int a = 0; a < 48; ++a) {
    for (int b = a + 1; b < 48; ++b) {
      double max_diff = 0;
      for (int j = 0; j < 16; ++j) {
        max_diff = std::max(max_diff, std::abs(pe->value[a * 16 + j] - pe->value[b * 16 + j]));
      }
      CHECK(max_diff > 0.0);
    }
  }
}

TEST_CASE("pixel embedding rows agree with the single-row builder") {
  auto pe = pixel_pos_embedding<double>({{3, 2}}, 8);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 2; ++x) {
      const auto row = pos_embed_row((x + 0.5) / 2, (y + 0.5) / 3, 8);
      for (int j = 0; j < 8; ++j) {
        CHECK(pe->value[static_cast<std::size_t>(y * 2 + x) * 8 + j] == doctest::Approx(row[static_cast<std::size_t>(j)]).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("add_positional adds pixel and level embeddings without mutating inputs") {
  std::mt19937_64 rng(5);
  auto pyr = fake_pyramid({{2, 2}, {1, 2}}, 8, rng);
  auto mem = flatten_concat(pyr);

  PositionalEmbedding<double> pe;
  pe.pixel = pixel_pos_embedding<double>(mem.level_shapes, 8);
  pe.level = make_tensor<double>({2, 8});
  fill_uniform(pe.level->value, rng, -0.1, 0.1);

  const auto features_before = mem.features->value;
  const auto pixel_before = pe.pixel->value;
  const auto level_before = pe.level->value;

  auto out = add_positional(mem, pe);
  for (int r = 0; r < mem.n; ++r) {
    const int level = r < 4 ? 0 : 1;
    for (int j = 0; j < 8; ++j) {
      const double expect = mem.features->value[static_cast<std::size_t>(r) * 8 + j] +
                            pe.level->value[static_cast<std::size_t>(level) * 8 + j];
      CHECK(out->value[static_cast<std::size_t>(r) * 8 + j] ==
            expect + pe.pixel->value[static_cast<std::size_t>(r) * 8 + j]);
    }
  }
  CHECK(mem.features->value == features_before);
  CHECK(pe.pixel->value == pixel_before);
  CHECK(pe.level->value == level_before);

  SUBCASE("zero features and zero level embedding give the pixel embedding") {
    std::fill(mem.features->value.begin(), mem.features->value.end(), 0.0);
    std::fill(pe.level->value.begin(), pe.level->value.end(), 0.0);
    auto only_pixel = add_positional(mem, pe);
    CHECK(only_pixel->value == pe.pixel->value);
  }
  SUBCASE("zero embeddings reproduce the features") {
    std::fill(pe.pixel->value.begin(), pe.pixel->value.end(), 0.0);
    std::fill(pe.level->value.begin(), pe.level->value.end(), 0.0);
    auto only_features = add_positional(mem, pe);
    CHECK(only_features->value == mem.features->value);
  }
}

TEST_CASE("shifting one level embedding row shifts exactly that level's rows") {
  std::mt19937_64 rng(6);
  auto pyr = fake_pyramid({{2, 3}, {2, 2}}, 4, rng);
  auto mem = flatten_concat(pyr);
  PositionalEmbedding<double> pe;
  pe.pixel = pixel_pos_embedding<double>(mem.level_shapes, 4);
  pe.level = make_tensor<double>({2, 4});
  fill_uniform(pe.level->value, rng, -0.1, 0.1);

  PositionalEmbedding<double> pe_shifted;
  pe_shifted.pixel = pe.pixel;
  pe_shifted.level = make_tensor<double>({2, 4}, pe.level->value);
  const std::vector<double> shift{0.5, -0.25, 1.0, 2.0};
  for (int j = 0; j < 4; ++j) pe_shifted.level->value[4 + j] += shift[static_cast<std::size_t>(j)];

  auto base = add_positional(mem, pe);
  auto shifted = add_positional(mem, pe_shifted);
  for (int r = 0; r < mem.n; ++r) {
    for (int j = 0; j < 4; ++j) {
      // recompute the expected row directly
      const int level = r < 6 ? 0 : 1;
      const double expect = mem.features->value[static_cast<std::size_t>(r) * 4 + j] +
                            pe_shifted.level->value[static_cast<std::size_t>(level) * 4 + j] +
                            pe.pixel->value[static_cast<std::size_t>(r) * 4 + j];
      CHECK(shifted->value[static_cast<std::size_t>(r) * 4 + j] == expect);
      if (r < 6) {
        CHECK(shifted->value[static_cast<std::size_t>(r) * 4 + j] == base->value[static_cast<std::size_t>(r) * 4 + j]);
      }
    }
  }
}

}  // TEST_SUITE

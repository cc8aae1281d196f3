#include <doctest.h>

#include <cmath>
#include <random>

#include "tfpose/gradcheck.hpp"
#include "tfpose/ops.hpp"
#include "tfpose/rng.hpp"
#include "tfpose/tensor.hpp"

using namespace tfpose;

namespace {

TensorPtr<double> rand_param(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  auto t = make_tensor<double>(std::move(shape));
  fill_uniform(t->value, rng, lo, hi);
  t->requires_grad = true;
  return t;
}

std::vector<double> rand_weights(std::int64_t n, std::mt19937_64& rng) {
  std::vector<double> w(static_cast<std::size_t>(n));
  fill_uniform(w, rng, -1.0, 1.0);
  return w;
}

}  // namespace

TEST_SUITE("gradcheck") {

TEST_CASE("sigmoid gradient at zero matches 1/4 to high accuracy") {
  auto x = make_tensor<double>({1}, {0.0});
  x->requires_grad = true;
  auto forward = [&] { return sum_all(sigmoid(x)); };

  Gradients<double> g;
  backward(forward(), g);
  CHECK(g.of(x.get())[0] == doctest::Approx(0.25).epsilon(1e-12));

  GradCheckOptions opt;
  opt.h = 1e-5;
  const auto report = finite_diff_check("sigmoid", forward, {x}, opt);
  CHECK(report.max_rel_err < 1e-7);
  CHECK(report.params_checked == 1);
}

TEST_CASE("linear map weight gradient equals the outer product") {
  std::mt19937_64 rng(101);
  auto w = rand_param({2, 3}, rng);
  auto x = rand_param({3, 1}, rng);
  x->requires_grad = false;
  const auto seed = rand_weights(2, rng);
  auto forward = [&] { return weighted_sum(matmul(w, x), seed); };

  Gradients<double> g;
  backward(forward(), g);
  const auto& gw = g.of(w.get());
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(gw[i * 3 + j] - seed[static_cast<std::size_t>(i)] * x->value[static_cast<std::size_t>(j)]) < 1e-12);
    }
  }

  GradCheckOptions opt;
  opt.h = 1e-5;
  const auto report = finite_diff_check("linear_map", forward, {w}, opt);
  CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("a deliberately corrupted gradient is caught") {
  auto x = make_tensor<double>({3}, {0.3, -0.2, 0.5});
  x->requires_grad = true;
  auto forward = [&] {
    auto out = detail::op_node<double>("corrupt_sum", {1}, {x});
    double s = 0;
    for (double v : x->value) s += v;
    out->value[0] = s;
    auto* px = x.get();
    out->backward_fn = [px](const TensorNode<double>* self, Gradients<double>& g) {
      const double go = g.of(self)[0];
      auto& gx = g.of(px);
      for (auto& v : gx) v += go + 0.1;  // injected fault
    };
    return out;
  };
  const auto report = finite_diff_check("corrupt_sum", forward, {x});
  CHECK(report.max_rel_err > 1e-2);
}

TEST_CASE("non-finite gradients are reported as failures") {
  auto x = make_tensor<double>({1}, {0.5});
  x->requires_grad = true;
  auto forward = [&] {
    auto out = detail::op_node<double>("bad_grad", {1}, {x});
    out->value[0] = x->value[0];
    auto* px = x.get();
    out->backward_fn = [px](const TensorNode<double>*, Gradients<double>& g) {
      g.of(px)[0] += std::numeric_limits<double>::quiet_NaN();
    };
    return out;
  };
  CHECK_THROWS_WITH_AS(finite_diff_check("bad_grad", forward, {x}),
                       doctest::Contains("bad_grad"), std::runtime_error);
}

TEST_CASE("every differentiable primitive passes the finite-difference check") {
  std::mt19937_64 rng(2024);
  GradCheckOptions opt;
  opt.h = 1e-4;
  opt.max_entries_per_input = 24;

  SUBCASE("add, sub, mul, scale chains") {
    auto a = rand_param({3, 4}, rng);
    auto b = rand_param({3, 4}, rng);
    const auto s = rand_weights(12, rng);
    auto forward = [&] { return weighted_sum(mul(add(a, b), sub(scale(a, 1.7), b)), s); };
    CHECK(finite_diff_check("elementwise", forward, {a, b}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("relu away from the kink") {
    auto a = rand_param({3, 4}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < a->value.size(); i += 2) a->value[i] = -a->value[i];
    const auto s = rand_weights(12, rng);
    auto forward = [&] { return weighted_sum(relu(a), s); };
    CHECK(finite_diff_check("relu", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("absolute away from the kink") {
    auto a = rand_param({6}, rng, 0.1, 1.0);
    a->value[1] = -a->value[1];
    const auto s = rand_weights(6, rng);
    auto forward = [&] { return weighted_sum(absolute(a), s); };
    CHECK(finite_diff_check("absolute", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("sigmoid") {
    auto a = rand_param({5}, rng, -3, 3);
    const auto s = rand_weights(5, rng);
    auto forward = [&] { return weighted_sum(sigmoid(a), s); };
    CHECK(finite_diff_check("sigmoid", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("clamp interior") {
    auto a = rand_param({6}, rng, -0.8, 0.8);
    const auto s = rand_weights(6, rng);
    auto forward = [&] { return weighted_sum(clamp(a, -0.9, 0.9), s); };
    CHECK(finite_diff_check("clamp", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("matmul") {
    auto a = rand_param({3, 5}, rng);
    auto b = rand_param({5, 4}, rng);
    const auto s = rand_weights(12, rng);
    auto forward = [&] { return weighted_sum(matmul(a, b), s); };
    CHECK(finite_diff_check("matmul", forward, {a, b}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("add_row_vector") {
    auto a = rand_param({4, 3}, rng);
    auto v = rand_param({3}, rng);
    const auto s = rand_weights(12, rng);
    auto forward = [&] { return weighted_sum(add_row_vector(a, v), s); };
    CHECK(finite_diff_check("add_row_vector", forward, {a, v}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("softmax") {
    auto a = rand_param({3, 6}, rng, -2, 2);
    const auto s = rand_weights(18, rng);
    auto forward = [&] { return weighted_sum(softmax(a, -1), s); };
    CHECK(finite_diff_check("softmax", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("layer_norm") {
    auto a = rand_param({3, 6}, rng);
    auto gamma = rand_param({6}, rng, 0.5, 1.5);
    auto beta = rand_param({6}, rng);
    const auto s = rand_weights(18, rng);
    auto forward = [&] { return weighted_sum(layer_norm(a, gamma, beta), s); };
    CHECK(finite_diff_check("layer_norm", forward, {a, gamma, beta}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("conv2d") {
    auto x = rand_param({5, 4, 2}, rng);
    auto w = rand_param({3, 3, 2, 3}, rng);
    auto b = rand_param({3}, rng);
    auto probe = conv2d(x, w, b, 2, 1);
    const auto s = rand_weights(probe->size(), rng);
    auto forward = [&] { return weighted_sum(conv2d(x, w, b, 2, 1), s); };
    CHECK(finite_diff_check("conv2d", forward, {x, w, b}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("conv_transpose2d") {
    auto x = rand_param({3, 4, 2}, rng);
    auto w = rand_param({4, 4, 2, 3}, rng);
    auto b = rand_param({3}, rng);
    auto probe = conv_transpose2d(x, w, b, 2, 1);
    const auto s = rand_weights(probe->size(), rng);
    auto forward = [&] { return weighted_sum(conv_transpose2d(x, w, b, 2, 1), s); };
    CHECK(finite_diff_check("conv_transpose2d", forward, {x, w, b}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("reshape, transpose, slicing, concatenation") {
    auto a = rand_param({4, 6}, rng);
    const auto s = rand_weights(24, rng);
    auto forward = [&] {
      auto t = transpose2d(reshape(a, {6, 4}));  // 4x6
      auto parts = concat_cols<double>({slice_cols(t, 0, 2), slice_cols(t, 2, 6)});
      auto rows = concat_rows<double>({slice_rows(parts, 0, 1), slice_rows(parts, 1, 4)});
      return weighted_sum(rows, s);
    };
    CHECK(finite_diff_check("shape_plumbing", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("bilinear_sample in map and location") {
    auto map = rand_param({4, 5, 3}, rng);
    auto loc = make_tensor<double>({2}, {0.37, 0.61});
    loc->requires_grad = true;
    const auto s = rand_weights(3, rng);
    auto forward = [&] { return weighted_sum(bilinear_sample(map, loc), s); };
    CHECK(finite_diff_check("bilinear_sample", forward, {map, loc}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("add_level_embedding") {
    auto x = rand_param({5, 3}, rng);
    auto e = rand_param({2, 3}, rng);
    const std::vector<int> offsets{0, 2, 5};
    const auto s = rand_weights(15, rng);
    auto forward = [&] { return weighted_sum(add_level_embedding(x, e, offsets), s); };
    CHECK(finite_diff_check("add_level_embedding", forward, {x, e}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("refine_coords") {
    auto y = rand_param({3, 2}, rng, 0.1, 0.9);
    auto d = rand_param({3, 2}, rng, -2, 2);
    const auto s = rand_weights(6, rng);
    auto forward = [&] { return weighted_sum(refine_coords(y, d), s); };
    CHECK(finite_diff_check("refine_coords", forward, {y, d}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("dropout with a replayed mask") {
    auto a = rand_param({10}, rng);
    const auto s = rand_weights(10, rng);
    auto forward = [&] {
      std::mt19937_64 mask_rng(99);
      return weighted_sum(dropout(a, 0.3, mask_rng), s);
    };
    CHECK(finite_diff_check("dropout", forward, {a}, opt).max_rel_err < 1e-3);
  }
  SUBCASE("sum and mean reductions") {
    auto a = rand_param({7}, rng);
    auto forward = [&] { return add(sum_all(a), scale(mean_all(a), 2.0)); };
    CHECK(finite_diff_check("reductions", forward, {a}, opt).max_rel_err < 1e-3);
  }
}

}  // TEST_SUITE

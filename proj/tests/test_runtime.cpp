#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "tfpose/checkpoint.hpp"
#include "tfpose/config.hpp"
#include "tfpose/optim.hpp"
#include "tfpose/rng.hpp"
#include "tfpose/runner.hpp"

using namespace tfpose;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("runtime") {

TEST_CASE("adamw with zero gradients and no weight decay is a no-op") {
  ParamRegistry<double> reg;
  auto p = reg.create("backbone.p", {3});
  p->value = {1.0, -2.0, 3.0};
  OptimConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.total_steps = 10;
  AdamW<double> adam(reg, cfg);
  Gradients<double> g;
  g.of(p.get());  // explicit zero buffer
  adam.step(g, 0);
  CHECK(p->value == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("the first adam step moves by exactly the learning rate") {
  ParamRegistry<double> reg;
  auto p = reg.create("backbone.p", {1});
  p->value = {0.7};
  OptimConfig cfg;
  cfg.base_lr = 0.01;
  cfg.weight_decay = 0.0;
  cfg.total_steps = 1000000;  // schedule factor at step 0 is 1
  AdamW<double> adam(reg, cfg);
  Gradients<double> g;
  g.of(p.get())[0] = 1.0;
  adam.step(g, 0);
  // bias-corrected first step: lr * g/|g| up to the eps term
  CHECK(std::abs((0.7 - p->value[0]) - 0.01) < 0.01 * 1e-7);
}

TEST_CASE("weight decay alone multiplies parameters by (1 - lr wd)") {
  ParamRegistry<double> reg;
  auto p = reg.create("backbone.p", {2});
  p->value = {2.0, -4.0};
  OptimConfig cfg;
  cfg.base_lr = 0.1;
  cfg.weight_decay = 0.01;
  cfg.total_steps = 1000000;
  AdamW<double> adam(reg, cfg);
  Gradients<double> g;  // no gradient buffers at all
  adam.step(g, 0);
  CHECK(p->value[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(p->value[1] == doctest::Approx(-4.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
}

TEST_CASE("non-finite gradients reject the step naming the parameter") {
  ParamRegistry<double> reg;
  auto a = reg.create("backbone.ok", {1});
  auto b = reg.create("backbone.broken", {1});
  a->value = {1.0};
  b->value = {1.0};
  OptimConfig cfg;
  AdamW<double> adam(reg, cfg);
  Gradients<double> g;
  g.of(a.get())[0] = 0.5;
  g.of(b.get())[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam.step(g, 0), doctest::Contains("backbone.broken"), std::runtime_error);
  CHECK(a->value[0] == 1.0);  // rejected step leaves parameters untouched
  CHECK(b->value[0] == 1.0);
}

TEST_CASE("cosine schedule hits 1, 1/2 and 0 at the landmarks") {
  OptimConfig cfg;
  cfg.total_steps = 1000;
  CHECK(cosine_lr_factor(0, cfg) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_lr_factor(500, cfg) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cosine_lr_factor(1000, cfg) == doctest::Approx(0.0).epsilon(1e-12));

  SUBCASE("non-increasing over the whole range without warmup") {
    double prev = 2.0;
    for (int s = 0; s <= 1000; s += 10) {
      const double f = cosine_lr_factor(s, cfg);
      CHECK(f <= prev + 1e-15);
      prev = f;
    }
  }
  SUBCASE("warmup ramps linearly before the decay") {
    cfg.warmup_steps = 100;
    CHECK(cosine_lr_factor(49, cfg) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cosine_lr_factor(100, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("optimizer config validation") {
  OptimConfig cfg;
  cfg.beta1 = 0.999;
  cfg.beta2 = 0.9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = OptimConfig{};
  cfg.base_lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("param groups partition the model by role") {
  Config cfg;
  cfg.model.keypoints = 3;
  cfg.model.input_h = 32;
  cfg.model.input_w = 32;
  cfg.model.enc_layers = 1;
  cfg.model.dec_layers = 1;
  cfg.model.channels = 8;
  cfg.model.heads = 2;
  cfg.model.points = 1;
  cfg.model.backbone_widths = {4, 4, 8, 8};
  cfg.model.aux_channels = 4;
  cfg.model.dropout = 0.0;
  auto bundle = build_model(cfg, 99);
  const auto groups = param_groups(bundle.params);
  CHECK(groups.main.size() + groups.transformer.size() == bundle.params.items().size());

  auto group_of = [&](const std::string& name) {
    for (std::size_t i : groups.main) {
      if (bundle.params.items()[i].first == name) return std::string("main");
    }
    for (std::size_t i : groups.transformer) {
      if (bundle.params.items()[i].first == name) return std::string("transformer");
    }
    return std::string("none");
  };
  CHECK(group_of("backbone.stem1.weight") == "main");
  CHECK(group_of("input_proj.0.weight") == "main");
  CHECK(group_of("aux.up1.weight") == "main");
  CHECK(group_of("y0_logits") == "transformer");
  CHECK(group_of("query_content") == "transformer");
  CHECK(group_of("level_embed") == "transformer");
  CHECK(group_of("encoder.0.attn.offset_proj.weight") == "transformer");
  CHECK(group_of("decoder.0.head3.weight") == "transformer");

  SUBCASE("a parameter outside every rule fails at startup") {
    ParamRegistry<float> rogue;
    rogue.create("mystery.weight", {2});
    CHECK_THROWS_WITH_AS(param_groups(rogue), doctest::Contains("mystery.weight"),
                         std::runtime_error);
  }
}

TEST_CASE("checkpoints round-trip parameters and optimizer state bitwise") {
  Config cfg;
  cfg.model.keypoints = 2;
  cfg.model.input_h = 32;
  cfg.model.input_w = 32;
  cfg.model.enc_layers = 0;
  cfg.model.dec_layers = 1;
  cfg.model.channels = 8;
  cfg.model.heads = 2;
  cfg.model.points = 1;
  cfg.model.backbone_widths = {4, 4, 8, 8};
  cfg.model.aux_channels = 4;
  cfg.model.dropout = 0.0;
  auto bundle = build_model(cfg, 7);
  AdamW<float> adam(bundle.params, cfg.optim);

  // run a couple of noisy updates so moments are nonzero
  std::mt19937_64 rng(3);
  for (int s = 0; s < 3; ++s) {
    Gradients<float> g;
    for (const auto& [name, t] : bundle.params.items()) {
      auto& buf = g.of(t.get());
      fill_uniform(buf, rng, -0.1, 0.1);
    }
    adam.step(g, s);
  }

  const std::string path = temp_path("tfpose_ckpt_test.tfpz");
  save_checkpoint(path, bundle.params, &adam, 3, cfg.to_json());

  const auto data = load_checkpoint(path);
  CHECK(data.step == 3);
  CHECK(data.has_optimizer);
  CHECK(data.config_json == cfg.to_json());

  auto bundle2 = build_model(Config::from_json_text(data.config_json), 1234);
  apply_checkpoint_params(data, bundle2.params);
  AdamW<float> adam2(bundle2.params, cfg.optim);
  apply_checkpoint_optimizer(data, bundle2.params, adam2);

  REQUIRE(bundle2.params.items().size() == bundle.params.items().size());
  for (std::size_t i = 0; i < bundle.params.items().size(); ++i) {
    CHECK(bundle.params.items()[i].second->value == bundle2.params.items()[i].second->value);
    CHECK(adam.moment1()[i] == adam2.moment1()[i]);
    CHECK(adam.moment2()[i] == adam2.moment2()[i]);
  }

  SUBCASE("a second save of the loaded state is byte-identical") {
    const std::string path2 = temp_path("tfpose_ckpt_test2.tfpz");
    save_checkpoint(path2, bundle2.params, &adam2, 3, data.config_json);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::remove(path2.c_str());
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint shape mismatches are rejected") {
  Config small;
  small.model.keypoints = 2;
  small.model.input_h = 32;
  small.model.input_w = 32;
  small.model.enc_layers = 0;
  small.model.dec_layers = 1;
  small.model.channels = 8;
  small.model.heads = 2;
  small.model.points = 1;
  small.model.backbone_widths = {4, 4, 8, 8};
  small.model.aux_channels = 4;
  auto bundle = build_model(small, 7);
  const std::string path = temp_path("tfpose_ckpt_mismatch.tfpz");
  save_checkpoint<float>(path, bundle.params, nullptr, 0, small.to_json());
  const auto data = load_checkpoint(path);

  Config bigger = small;
  bigger.model.channels = 16;
  auto other = build_model(bigger, 7);
  CHECK_THROWS_AS(apply_checkpoint_params(data, other.params), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("config parsing applies defaults and rejects unknown keys") {
  const auto cfg = Config::from_json_text("{}");
  // paper-pinned defaults
  CHECK(cfg.optim.base_lr == doctest::Approx(4e-3));
  CHECK(cfg.optim.beta1 == doctest::Approx(0.9));
  CHECK(cfg.optim.beta2 == doctest::Approx(0.999));
  CHECK(cfg.optim.weight_decay == doctest::Approx(1e-4));
  CHECK(cfg.optim.transformer_lr_factor == doctest::Approx(0.1));
  CHECK(cfg.loss.lambda_aux == doctest::Approx(50.0));
  CHECK(cfg.model.keypoints == 17);
  CHECK(cfg.model.enc_layers == 6);
  CHECK(cfg.model.dec_layers == 6);
  CHECK(cfg.model.channels == 256);
  CHECK(cfg.model.heads == 8);
  CHECK(cfg.model.points == 4);

  CHECK_THROWS_WITH_AS(Config::from_json_text(R"({"optim": {"lr": 0.1}})"),
                       doctest::Contains("optim.lr"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(Config::from_json_text(R"({"training": {}})"),
                       doctest::Contains("training"), std::invalid_argument);
  CHECK_THROWS_AS(Config::from_json_text("not json"), std::invalid_argument);

  SUBCASE("round trip through to_json") {
    auto text = cfg.to_json();
    auto cfg2 = Config::from_json_text(text);
    CHECK(cfg2.to_json() == text);
  }
}

TEST_CASE("record container rejects corrupt files") {
  const std::string path = temp_path("tfpose_bad_record.tfpz");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  std::vector<Record> records;
  CHECK_THROWS_AS(read_record_file(path, records), std::runtime_error);
  std::remove(path.c_str());
}

}  // TEST_SUITE

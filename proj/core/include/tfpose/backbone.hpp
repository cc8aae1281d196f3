#pragma once

#include <random>
#include <string>
#include <vector>

#include "tfpose/layers.hpp"
#include "tfpose/model_config.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

/// Multi-level feature maps ordered by stride.
template <typename T>
struct FeaturePyramid {
  struct Level {
    int stride = 0;
    TensorPtr<T> map;  // (h/stride)×(w/stride)×channels
  };
  std::vector<Level> levels;
};

/// Small trainable stand-in for a classification backbone: a stride-4 stem of
/// two stride-2 convolutions, then one residual block per level with a
/// stride-2 downsampling convolution between levels. Emits taps at strides
/// 4, 8, 16 and 32 with the configured per-level channel widths.
template <typename T>
class ToyBackbone {
 public:
  ToyBackbone(const ModelConfig& cfg, ParamRegistry<T>& reg, std::mt19937_64& rng);

  /// Image must be h×w×3 with both dimensions divisible by 32.
  FeaturePyramid<T> operator()(const TensorPtr<T>& image) const;

 private:
  struct Block {
    Conv2d<T> a, b;
  };
  Conv2d<T> stem1_, stem2_;
  std::vector<Conv2d<T>> down_;  // between-level stride-2 convs
  std::vector<Block> blocks_;    // one residual block per level
};

/// Per-level 1×1 convolutions bringing every pyramid level to `channels`.
template <typename T>
class LevelProjector {
 public:
  LevelProjector(const std::vector<int>& in_channels, int out_channels, ParamRegistry<T>& reg,
                 std::mt19937_64& rng);

  FeaturePyramid<T> operator()(const FeaturePyramid<T>& pyr) const;

 private:
  std::vector<Conv2d<T>> proj_;
};

}  // namespace tfpose

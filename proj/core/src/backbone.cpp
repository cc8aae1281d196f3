#include "tfpose/backbone.hpp"

#include <stdexcept>

#include "tfpose/ops.hpp"

namespace tfpose {

template <typename T>
ToyBackbone<T>::ToyBackbone(const ModelConfig& cfg, ParamRegistry<T>& reg, std::mt19937_64& rng) {
  const auto& w = cfg.backbone_widths;
  stem1_ = Conv2d<T>(reg, "backbone.stem1", 3, 3, w[0], 2, 1, rng);
  stem2_ = Conv2d<T>(reg, "backbone.stem2", 3, w[0], w[0], 2, 1, rng);
  for (int l = 0; l < 4; ++l) {
    if (l > 0) {
      down_.push_back(Conv2d<T>(reg, "backbone.down" + std::to_string(l), 3, w[l - 1], w[l], 2, 1, rng));
    }
    Block blk;
    blk.a = Conv2d<T>(reg, "backbone.block" + std::to_string(l) + ".a", 3, w[l], w[l], 1, 1, rng);
    blk.b = Conv2d<T>(reg, "backbone.block" + std::to_string(l) + ".b", 3, w[l], w[l], 1, 1, rng);
    blocks_.push_back(std::move(blk));
  }
}

template <typename T>
FeaturePyramid<T> ToyBackbone<T>::operator()(const TensorPtr<T>& image) const {
  if (image->shape.size() != 3 || image->shape[2] != 3) {
    throw std::invalid_argument("backbone: image must be h×w×3, got " + shape_to_string(image->shape));
  }
  const int h = image->shape[0], w = image->shape[1];
  if (h % 32 != 0 || w % 32 != 0) {
    throw std::invalid_argument("backbone: image dimensions must be divisible by 32, got " +
                                shape_to_string(image->shape));
  }

  FeaturePyramid<T> pyr;
  auto x = relu(stem1_(image));
  x = relu(stem2_(x));  // stride 4
  int stride = 4;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    if (l > 0) {
      x = relu(down_[l - 1](x));
      stride *= 2;
    }
    auto y = relu(blocks_[l].a(x));
    y = blocks_[l].b(y);
    x = relu(add(x, y));
    pyr.levels.push_back({stride, x});
  }
  return pyr;
}

template <typename T>
LevelProjector<T>::LevelProjector(const std::vector<int>& in_channels, int out_channels,
                                  ParamRegistry<T>& reg, std::mt19937_64& rng) {
  for (std::size_t l = 0; l < in_channels.size(); ++l) {
    proj_.push_back(Conv2d<T>(reg, "input_proj." + std::to_string(l), 1, in_channels[l], out_channels,
                              1, 0, rng));
  }
}

template <typename T>
FeaturePyramid<T> LevelProjector<T>::operator()(const FeaturePyramid<T>& pyr) const {
  if (pyr.levels.size() != proj_.size()) {
    throw std::invalid_argument("project_levels: expected " + std::to_string(proj_.size()) +
                                " levels, got " + std::to_string(pyr.levels.size()));
  }
  FeaturePyramid<T> out;
  for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
    out.levels.push_back({pyr.levels[l].stride, proj_[l](pyr.levels[l].map)});
  }
  return out;
}

template class ToyBackbone<float>;
template class ToyBackbone<double>;
template class LevelProjector<float>;
template class LevelProjector<double>;

}  // namespace tfpose

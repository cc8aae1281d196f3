#include "tfpose/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "tfpose/ops.hpp"

namespace tfpose {

template <typename T>
TensorPtr<T> regression_loss(const PredictionBundle<T>& bundle, const KeypointSet& target,
                             const LossConfig& cfg) {
  if (bundle.coords.empty()) throw std::invalid_argument("regression_loss: bundle has no predictions");
  const int k = target.k();
  if (bundle.coords[0]->shape[0] != k) {
    throw_shape_mismatch("regression_loss", bundle.coords[0]->shape, {k, 2});
  }

  int supervised = 0;
  for (int i = 0; i < k; ++i) {
    if (!cfg.visibility_masking || target.labeled(i)) ++supervised;
  }
  if (supervised == 0) {
    auto zero = make_tensor<T>({1}, T(0));
    zero->requires_grad = bundle.coords[0]->requires_grad;
    return zero;
  }

  std::vector<T> weights(static_cast<std::size_t>(k) * 2, T(0));
  std::vector<T> tvals(static_cast<std::size_t>(k) * 2, T(0));
  for (int i = 0; i < k; ++i) {
    const bool on = !cfg.visibility_masking || target.labeled(i);
    weights[2 * i] = weights[2 * i + 1] = on ? T(1) / static_cast<T>(supervised) : T(0);
    tvals[2 * i] = static_cast<T>(target.x(i));
    tvals[2 * i + 1] = static_cast<T>(target.y(i));
  }
  auto target_t = make_tensor<T>({k, 2}, std::move(tvals));

  TensorPtr<T> total;
  for (const auto& coords : bundle.coords) {
    auto layer_loss = weighted_sum(absolute(sub(coords, target_t)), weights);
    total = total ? add(total, layer_loss) : layer_loss;
  }
  return total;
}

template <typename T>
Heatmap<T> make_gt_heatmap(const KeypointSet& target, int h, int w, double sigma) {
  if (h < 1 || w < 1) throw std::invalid_argument("make_gt_heatmap: non-positive shape");
  if (sigma <= 0) throw std::invalid_argument("make_gt_heatmap: sigma must be positive");
  const int k = target.k();
  Heatmap<T> hm;
  hm.h = h;
  hm.w = w;
  hm.k = k;
  hm.sigma = sigma;
  hm.maps = make_tensor<T>({h, w, k});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < k; ++i) {
    if (!target.labeled(i)) continue;
    // continuous peak location in cell-index space, cell centers at integers
    const double gx = target.x(i) * w - 0.5;
    const double gy = target.y(i) * h - 0.5;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double d2 = (x - gx) * (x - gx) + (y - gy) * (y - gy);
        hm.maps->value[(static_cast<std::size_t>(y) * w + x) * k + i] =
            static_cast<T>(std::exp(-d2 * inv));
      }
    }
  }
  return hm;
}

template <typename T>
AuxHead<T>::AuxHead(const ModelConfig& cfg, ParamRegistry<T>& reg, std::mt19937_64& rng) {
  const int a = cfg.aux_channels;
  up1_ = ConvTranspose2d<T>(reg, "aux.up1", 4, cfg.channels, a, 2, 1, rng);
  up2_ = ConvTranspose2d<T>(reg, "aux.up2", 4, a, a, 2, 1, rng);
  up3_ = ConvTranspose2d<T>(reg, "aux.up3", 4, a, a, 2, 1, rng);
  out_ = Conv2d<T>(reg, "aux.out", 1, a, cfg.keypoints, 1, 0, rng);
}

template <typename T>
Heatmap<T> AuxHead<T>::operator()(const TensorPtr<T>& memory_c5) const {
  auto x = relu(up1_(memory_c5));
  x = relu(up2_(x));
  x = relu(up3_(x));
  auto maps = out_(x);
  Heatmap<T> hm;
  hm.h = maps->shape[0];
  hm.w = maps->shape[1];
  hm.k = maps->shape[2];
  hm.maps = maps;
  return hm;
}

template <typename T>
TensorPtr<T> heatmap_mse(const Heatmap<T>& pred, const Heatmap<T>& target) {
  if (!shapes_equal(pred.maps->shape, target.maps->shape)) {
    throw_shape_mismatch("heatmap_mse", pred.maps->shape, target.maps->shape);
  }
  auto diff = sub(pred.maps, target.maps);
  return mean_all(mul(diff, diff));
}

template <typename T>
LossBreakdown<T> overall_loss(const PredictionBundle<T>& bundle, const KeypointSet& target,
                              const Heatmap<T>& gt_heatmap, const Heatmap<T>& pred_heatmap,
                              const LossConfig& cfg) {
  LossBreakdown<T> out;
  out.l_reg = regression_loss(bundle, target, cfg);
  if (cfg.lambda_aux > 0.0) {
    if (!pred_heatmap.maps) {
      throw std::invalid_argument("overall_loss: lambda > 0 requires a predicted heatmap");
    }
    out.l_aux = heatmap_mse(pred_heatmap, gt_heatmap);
    out.total = add(out.l_reg, scale(out.l_aux, cfg.lambda_aux));
  } else {
    out.total = out.l_reg;
  }
  return out;
}

#define TFPOSE_INSTANTIATE_LOSSES(T)                                                            \
  template TensorPtr<T> regression_loss<T>(const PredictionBundle<T>&, const KeypointSet&,      \
                                           const LossConfig&);                                  \
  template Heatmap<T> make_gt_heatmap<T>(const KeypointSet&, int, int, double);                 \
  template class AuxHead<T>;                                                                    \
  template TensorPtr<T> heatmap_mse<T>(const Heatmap<T>&, const Heatmap<T>&);                   \
  template LossBreakdown<T> overall_loss<T>(const PredictionBundle<T>&, const KeypointSet&,     \
                                            const Heatmap<T>&, const Heatmap<T>&, const LossConfig&);

TFPOSE_INSTANTIATE_LOSSES(float)
TFPOSE_INSTANTIATE_LOSSES(double)

#undef TFPOSE_INSTANTIATE_LOSSES

}  // namespace tfpose

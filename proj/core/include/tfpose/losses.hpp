#pragma once

#include <random>
#include <string>
#include <vector>

#include "tfpose/keypoints.hpp"
#include "tfpose/layers.hpp"
#include "tfpose/model_config.hpp"
#include "tfpose/tensor.hpp"
#include "tfpose/transformer.hpp"

namespace tfpose {

template <typename T>
struct Heatmap {
  int h = 0, w = 0, k = 0;
  TensorPtr<T> maps;  // h×w×k
  double sigma = 0;
};

struct LossConfig {
  double lambda_aux = 50.0;
  double sigma = 2.0;  // ground-truth Gaussian std, in heatmap cells
  bool visibility_masking = true;
};

/// Sum over decoder layers of the L1 distance to the targets, averaged over
/// supervised keypoints (summed over the two coordinates). With no supervised
/// keypoint the loss is an exact zero.
template <typename T>
TensorPtr<T> regression_loss(const PredictionBundle<T>& bundle, const KeypointSet& target,
                             const LossConfig& cfg = {});

/// Unnormalized peak-1 Gaussians at the continuous keypoint locations,
/// evaluated at cell centers; unlabeled keypoints give an all-zero channel.
template <typename T>
Heatmap<T> make_gt_heatmap(const KeypointSet& target, int h, int w, double sigma);

/// Heatmap head over the C5 block of the memory: three 4/2/1 transposed
/// convolutions (ReLU after each) for the 8x upsampling, then a 1×1
/// convolution down to K channels. Training-only; removed at inference.
template <typename T>
class AuxHead {
 public:
  AuxHead() = default;
  AuxHead(const ModelConfig& cfg, ParamRegistry<T>& reg, std::mt19937_64& rng);

  Heatmap<T> operator()(const TensorPtr<T>& memory_c5) const;

 private:
  ConvTranspose2d<T> up1_, up2_, up3_;
  Conv2d<T> out_;
};

/// Mean squared error over all cells and channels.
template <typename T>
TensorPtr<T> heatmap_mse(const Heatmap<T>& pred, const Heatmap<T>& target);

template <typename T>
struct LossBreakdown {
  TensorPtr<T> total;
  TensorPtr<T> l_reg;
  TensorPtr<T> l_aux;  // null when the auxiliary branch is off
};

/// total = L_reg + lambda · L_aux; pass a null pred heatmap when lambda = 0.
template <typename T>
LossBreakdown<T> overall_loss(const PredictionBundle<T>& bundle, const KeypointSet& target,
                              const Heatmap<T>& gt_heatmap, const Heatmap<T>& pred_heatmap,
                              const LossConfig& cfg);

}  // namespace tfpose

#pragma once

#include <array>

namespace tfpose {

/// Architecture knobs for the full model. Ablation axes (q2q toggle, channel
/// width, decoder depth, C2 inclusion, auxiliary head) are all plain config.
struct ModelConfig {
  int keypoints = 17;
  int input_h = 256;
  int input_w = 192;
  int enc_layers = 6;
  int dec_layers = 6;
  int channels = 256;
  int heads = 8;
  int points = 4;  // sampling points per head per level
  bool include_c2 = true;
  int ffn_width = 0;  // 0 → 2 * channels
  bool q2q = true;
  double dropout = 0.1;
  std::array<int, 4> backbone_widths{32, 64, 128, 256};
  int aux_channels = 256;  // deconvolution width of the heatmap head

  int levels() const { return include_c2 ? 4 : 3; }
  int ffn() const { return ffn_width > 0 ? ffn_width : 2 * channels; }
  int head_dim() const { return channels / heads; }

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

}  // namespace tfpose

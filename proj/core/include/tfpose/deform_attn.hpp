#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tfpose/encoding.hpp"
#include "tfpose/layers.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

struct DeformAttnConfig {
  int heads = 8;
  int points = 4;  // per head per level
  int levels = 4;
  int channels = 256;

  void validate() const;
};

struct SamplePoint {
  double x = 0, y = 0;  // normalized sampling location (may leave [0,1])
  double weight = 0;
};

/// Sampling locations and attention weights of one deformable-attention call,
/// indexed query-major: ((q*heads + h)*levels + l)*points + p. Weights over
/// (levels × points) sum to 1 for each (query, head).
struct SamplingTrace {
  int queries = 0, heads = 0, levels = 0, points = 0;
  std::vector<std::pair<int, int>> level_shapes;
  std::vector<SamplePoint> entries;

  const SamplePoint& at(int q, int h, int l, int p) const {
    return entries[static_cast<std::size_t>(((q * heads + h) * levels + l) * points + p)];
  }
};

/// Fused sampling/aggregation core of multi-scale deformable attention.
///
/// Per (query, head, level, point) the location is
///   reference + offset / (W_l, H_l)     (offsets are in units of cells),
/// the head's slice of `value` is bilinearly sampled there (zero padding),
/// scaled by the matching attention weight and summed; heads are concatenated
/// into the m×c output. Differentiable in value, offsets, weights and
/// reference.
template <typename T>
TensorPtr<T> ms_deform_attn_core(const TensorPtr<T>& value,  // n×c
                                 const std::vector<std::pair<int, int>>& level_shapes,
                                 const std::vector<int>& level_offsets,
                                 const TensorPtr<T>& reference,  // m×2, clamped to [0,1]
                                 const TensorPtr<T>& offsets,    // m×(heads·L·P·2)
                                 const TensorPtr<T>& weights,    // m×(heads·L·P), normalized
                                 int heads, SamplingTrace* trace = nullptr);

/// Full attention block: learned linear maps produce sampling offsets and
/// softmax-normalized weights from the queries, values are a linear map of
/// the memory, and the aggregated heads pass through an output projection.
template <typename T>
class MsDeformAttn {
 public:
  MsDeformAttn() = default;
  MsDeformAttn(const DeformAttnConfig& cfg, ParamRegistry<T>& reg, const std::string& prefix,
               std::mt19937_64& rng);

  TensorPtr<T> operator()(const TensorPtr<T>& queries,    // m×c (content + positional)
                          const TensorPtr<T>& reference,  // m×2
                          const FlattenedMemory<T>& memory,
                          SamplingTrace* trace = nullptr) const;

  const DeformAttnConfig& config() const { return cfg_; }

 private:
  DeformAttnConfig cfg_;
  Linear<T> value_proj_, offset_proj_, weight_proj_, output_proj_;
};

/// Reference point of every memory pixel: its own level-local normalized cell
/// center ((x+0.5)/W_l, (y+0.5)/H_l).
template <typename T>
TensorPtr<T> encoder_reference_points(const FlattenedMemory<T>& memory);

}  // namespace tfpose

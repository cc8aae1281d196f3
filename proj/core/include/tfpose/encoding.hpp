#pragma once

#include <utility>
#include <vector>

#include "tfpose/backbone.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

/// The pyramid flattened into one n×c matrix: rows are level-major and
/// row-major within a level. Also carries the bookkeeping needed to map rows
/// back to (level, y, x).
template <typename T>
struct FlattenedMemory {
  TensorPtr<T> features;                       // n×c
  std::vector<std::pair<int, int>> level_shapes;  // (H_l, W_l)
  std::vector<int> level_offsets;              // size L+1, offsets[L] = n
  int n = 0;

  int levels() const { return static_cast<int>(level_shapes.size()); }
};

template <typename T>
FlattenedMemory<T> flatten_concat(const FeaturePyramid<T>& pyr);

/// Rows of one level reshaped back into its H×W×c map.
template <typename T>
TensorPtr<T> unflatten_level(const FlattenedMemory<T>& mem, int level);

/// One row of the fixed 2-D sine/cosine embedding at normalized position
/// (u, v): c/2 channels for u and c/2 for v, sine and cosine interleaved,
/// geometric frequency schedule with temperature 10000.
std::vector<double> pos_embed_row(double u, double v, int c);

/// Embedding rows for every pixel of every level, positions normalized
/// level-locally to cell centers (i+0.5)/extent. Parameter-free.
template <typename T>
TensorPtr<T> pixel_pos_embedding(const std::vector<std::pair<int, int>>& level_shapes, int c);

template <typename T>
struct PositionalEmbedding {
  TensorPtr<T> pixel;  // n×c, fixed
  TensorPtr<T> level;  // L×c, learned
};

/// features + pixel embedding + per-level embedding, row-wise. Inputs are not
/// modified; both the bare features and the embedded sum stay available.
template <typename T>
TensorPtr<T> add_positional(const FlattenedMemory<T>& mem, const PositionalEmbedding<T>& pe);

}  // namespace tfpose

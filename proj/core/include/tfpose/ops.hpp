#pragma once

#include <random>
#include <vector>

#include "tfpose/tensor.hpp"

namespace tfpose {

// Elementwise (shapes must match exactly; no implicit broadcasting).
template <typename T> TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T> TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T> TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b);
template <typename T> TensorPtr<T> scale(const TensorPtr<T>& a, double s);
template <typename T> TensorPtr<T> relu(const TensorPtr<T>& a);
template <typename T> TensorPtr<T> sigmoid(const TensorPtr<T>& a);
template <typename T> TensorPtr<T> absolute(const TensorPtr<T>& a);
template <typename T> TensorPtr<T> clamp(const TensorPtr<T>& a, double lo, double hi);

/// Inverted dropout: kept entries scaled by 1/(1-rate). rate = 0 is identity.
template <typename T> TensorPtr<T> dropout(const TensorPtr<T>& a, double rate, std::mt19937_64& rng);

// Shape plumbing.
template <typename T> TensorPtr<T> reshape(const TensorPtr<T>& a, Shape shape);
template <typename T> TensorPtr<T> transpose2d(const TensorPtr<T>& a);
template <typename T> TensorPtr<T> concat_rows(const std::vector<TensorPtr<T>>& parts);
template <typename T> TensorPtr<T> concat_cols(const std::vector<TensorPtr<T>>& parts);
template <typename T> TensorPtr<T> slice_rows(const TensorPtr<T>& a, int r0, int r1);
template <typename T> TensorPtr<T> slice_cols(const TensorPtr<T>& a, int c0, int c1);

// Linear algebra over 2-D tensors.
template <typename T> TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b);
/// x: m×n plus a length-n row vector added to every row.
template <typename T> TensorPtr<T> add_row_vector(const TensorPtr<T>& x, const TensorPtr<T>& v);
/// Normalization over the last axis with learned gain/bias of that length.
template <typename T> TensorPtr<T> layer_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                                              const TensorPtr<T>& beta, double eps = 1e-5);
/// Softmax along `axis` (negative counts from the back).
template <typename T> TensorPtr<T> softmax(const TensorPtr<T>& x, int axis = -1);

// 2-D convolutions on H×W×C tensors; kernels are kh×kw×Cin×Cout.
template <typename T> TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                                          const TensorPtr<T>& bias, int stride, int pad);
template <typename T> TensorPtr<T> conv_transpose2d(const TensorPtr<T>& x, const TensorPtr<T>& w,
                                                    const TensorPtr<T>& bias, int stride, int pad);

// Reductions to a scalar (shape [1]).
template <typename T> TensorPtr<T> sum_all(const TensorPtr<T>& x);
template <typename T> TensorPtr<T> mean_all(const TensorPtr<T>& x);
/// sum_i weights[i] * x[i] with a constant weight vector (masked losses).
template <typename T> TensorPtr<T> weighted_sum(const TensorPtr<T>& x, const std::vector<T>& weights);

/// Adds row l of `level_embed` (L×c) to the rows [offsets[l], offsets[l+1])
/// of x (n×c). offsets has L+1 entries, offsets[L] = n.
template <typename T> TensorPtr<T> add_level_embedding(const TensorPtr<T>& x, const TensorPtr<T>& level_embed,
                                                       const std::vector<int>& offsets);

/// Bilinear interpolation of an H×W×C map at a normalized location (shape
/// [2], (x, y) in [0,1]^2, cell centers at (i+0.5)/extent). Neighbors outside
/// the map contribute zero. Differentiable in both map values and location.
template <typename T> TensorPtr<T> bilinear_sample(const TensorPtr<T>& map, const TensorPtr<T>& loc);

/// One refinement step in logit space: sigmoid(logit(clamp(y, eps, 1-eps)) + delta).
template <typename T> TensorPtr<T> refine_coords(const TensorPtr<T>& y, const TensorPtr<T>& delta,
                                                 double eps = 1e-5);

}  // namespace tfpose

#pragma once

#include <random>
#include <string>

#include "tfpose/ops.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

/// Fully connected layer; weight is in×out, applied as x @ W + b.
template <typename T>
struct Linear {
  TensorPtr<T> weight;
  TensorPtr<T> bias;

  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& name, int in, int out, std::mt19937_64& rng);

  TensorPtr<T> operator()(const TensorPtr<T>& x) const {
    return add_row_vector(matmul(x, weight), bias);
  }
};

template <typename T>
struct LayerNorm {
  TensorPtr<T> gamma;
  TensorPtr<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamRegistry<T>& reg, const std::string& name, int dim);

  TensorPtr<T> operator()(const TensorPtr<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct Conv2d {
  TensorPtr<T> weight;  // kh×kw×Cin×Cout
  TensorPtr<T> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(ParamRegistry<T>& reg, const std::string& name, int kernel, int in, int out, int stride,
         int pad, std::mt19937_64& rng);

  TensorPtr<T> operator()(const TensorPtr<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct ConvTranspose2d {
  TensorPtr<T> weight;  // kh×kw×Cin×Cout
  TensorPtr<T> bias;
  int stride = 1;
  int pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParamRegistry<T>& reg, const std::string& name, int kernel, int in, int out,
                  int stride, int pad, std::mt19937_64& rng);

  TensorPtr<T> operator()(const TensorPtr<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad);
  }
};

}  // namespace tfpose

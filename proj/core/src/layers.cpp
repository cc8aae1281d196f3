#include "tfpose/layers.hpp"

#include <cmath>

#include "tfpose/rng.hpp"

namespace tfpose {

template <typename T>
Linear<T>::Linear(ParamRegistry<T>& reg, const std::string& name, int in, int out,
                  std::mt19937_64& rng) {
  weight = reg.create(name + ".weight", {in, out});
  bias = reg.create(name + ".bias", {out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  fill_uniform(weight->value, rng, -bound, bound);
  fill_uniform(bias->value, rng, -bound, bound);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamRegistry<T>& reg, const std::string& name, int dim) {
  gamma = reg.create(name + ".gamma", {dim});
  beta = reg.create(name + ".beta", {dim});
  std::fill(gamma->value.begin(), gamma->value.end(), T(1));
}

template <typename T>
Conv2d<T>::Conv2d(ParamRegistry<T>& reg, const std::string& name, int kernel, int in, int out,
                  int stride_, int pad_, std::mt19937_64& rng)
    : stride(stride_), pad(pad_) {
  weight = reg.create(name + ".weight", {kernel, kernel, in, out});
  bias = reg.create(name + ".bias", {out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel) * kernel * in);
  fill_uniform(weight->value, rng, -bound, bound);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(ParamRegistry<T>& reg, const std::string& name, int kernel,
                                    int in, int out, int stride_, int pad_, std::mt19937_64& rng)
    : stride(stride_), pad(pad_) {
  weight = reg.create(name + ".weight", {kernel, kernel, in, out});
  bias = reg.create(name + ".bias", {out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel) * kernel * in);
  fill_uniform(weight->value, rng, -bound, bound);
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ConvTranspose2d<float>;
template struct ConvTranspose2d<double>;

}  // namespace tfpose

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tfpose/tensor.hpp"

namespace tfpose {

struct OptimConfig {
  double base_lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// Learning-rate factor for the transformer-side parameter group.
  double transformer_lr_factor = 0.1;
  std::int64_t total_steps = 1000;
  std::int64_t warmup_steps = 0;

  void validate() const;
};

/// Cosine decay factor in [0,1]; 1 at step 0, 0 at total_steps. With
/// warmup_steps > 0 the factor ramps linearly first, then decays over the
/// remaining steps.
double cosine_lr_factor(std::int64_t step, const OptimConfig& cfg);

/// Index sets into ParamRegistry::items(). `main` takes the base rate
/// (backbone, input projections, auxiliary head); `transformer` runs at
/// base_lr · transformer_lr_factor (encoder/decoder stacks, query embeddings,
/// initial-coordinate logits, offset/weight projections, coordinate heads).
struct ParamGroups {
  std::vector<std::size_t> main;
  std::vector<std::size_t> transformer;
};

/// Partitions every registered parameter by name prefix; throws naming the
/// first parameter no rule covers.
template <typename T>
ParamGroups param_groups(const ParamRegistry<T>& reg);

/// AdamW with decoupled weight decay, bias correction and per-group rates.
template <typename T>
class AdamW {
 public:
  AdamW(const ParamRegistry<T>& params, const OptimConfig& cfg);

  /// Applies one update. `step_index` is 0-based; bias correction uses
  /// t = step_index + 1. Throws (without touching any parameter) if a
  /// gradient buffer holds a non-finite value, naming the parameter.
  void step(const Gradients<T>& grads, std::int64_t step_index);

  const OptimConfig& config() const { return cfg_; }
  const std::vector<std::vector<T>>& moment1() const { return m_; }
  const std::vector<std::vector<T>>& moment2() const { return v_; }
  /// Restores optimizer state (checkpoint resume); sizes must match.
  void set_state(std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

 private:
  const ParamRegistry<T>* params_;
  OptimConfig cfg_;
  ParamGroups groups_;
  std::vector<double> factor_;  // per parameter, group lr factor
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace tfpose

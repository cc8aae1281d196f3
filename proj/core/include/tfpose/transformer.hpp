#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "tfpose/backbone.hpp"
#include "tfpose/deform_attn.hpp"
#include "tfpose/encoding.hpp"
#include "tfpose/layers.hpp"
#include "tfpose/model_config.hpp"
#include "tfpose/tensor.hpp"

namespace tfpose {

enum class RunMode { kTrain, kInfer };

struct IntrospectOptions {
  bool q2q_matrices = false;
  bool sampling_traces = false;
};

/// Dropout context threaded through the stacks; a null rng (or zero rate)
/// makes every dropout an identity.
struct DropoutCtx {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// Everything one forward pass produces: the initial estimate, per-layer
/// refined coordinates and deltas, optional attention introspection, and in
/// train mode the C5 block of the memory for the auxiliary head.
template <typename T>
struct PredictionBundle {
  TensorPtr<T> y0;                      // K×2, sigmoid of the learned logits
  std::vector<TensorPtr<T>> coords;     // per decoder layer, K×2 in (0,1)^2
  std::vector<TensorPtr<T>> deltas;     // per decoder layer, K×2
  std::vector<std::vector<double>> q2q_attn;  // per layer, K·K row-major, head-averaged
  std::vector<SamplingTrace> p2q_traces;      // per layer
  TensorPtr<T> memory_c5;               // train mode: (h/32)×(w/32)×c
};

template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(int channels, int heads, ParamRegistry<T>& reg, const std::string& prefix,
                         std::mt19937_64& rng);

  /// Queries and keys are content + pos, values are the bare content.
  /// `attn_out`, when given, receives the head-averaged m×m attention matrix.
  TensorPtr<T> operator()(const TensorPtr<T>& content, const TensorPtr<T>& pos,
                          std::vector<double>* attn_out = nullptr) const;

 private:
  int heads_ = 0;
  Linear<T> q_, k_, v_, out_;
};

/// Self-attention among keypoint queries followed by residual add + norm.
template <typename T>
class Q2qAttention {
 public:
  Q2qAttention() = default;
  Q2qAttention(int channels, int heads, ParamRegistry<T>& reg, const std::string& prefix,
               std::mt19937_64& rng);

  TensorPtr<T> operator()(const TensorPtr<T>& content, const TensorPtr<T>& pos,
                          const DropoutCtx& ctx = {}, std::vector<double>* attn_out = nullptr) const;

 private:
  MultiHeadSelfAttention<T> mha_;
  LayerNorm<T> norm_;
};

template <typename T>
class EncoderLayer {
 public:
  EncoderLayer(const ModelConfig& cfg, ParamRegistry<T>& reg, const std::string& prefix,
               std::mt19937_64& rng);

  /// Returns the layer's output features (same n×c shape).
  TensorPtr<T> operator()(const FlattenedMemory<T>& mem, const TensorPtr<T>& pixel_embed,
                          const TensorPtr<T>& level_embed, const TensorPtr<T>& reference,
                          const DropoutCtx& ctx) const;

 private:
  MsDeformAttn<T> attn_;
  LayerNorm<T> norm1_, norm2_;
  Linear<T> ffn1_, ffn2_;
};

/// Runs the encoder stack over the flattened features; with no layers the
/// memory comes back untouched (the features node is reused as-is).
template <typename T>
FlattenedMemory<T> encode(FlattenedMemory<T> mem, const TensorPtr<T>& pixel_embed,
                          const TensorPtr<T>& level_embed,
                          const std::vector<EncoderLayer<T>>& layers, const DropoutCtx& ctx = {});

template <typename T>
class DecoderLayer {
 public:
  DecoderLayer(const ModelConfig& cfg, ParamRegistry<T>& reg, const std::string& prefix,
               std::mt19937_64& rng);

  struct Output {
    TensorPtr<T> queries;  // K×c
    TensorPtr<T> delta;    // K×2
  };

  Output operator()(const TensorPtr<T>& queries, const TensorPtr<T>& query_pos,
                    const FlattenedMemory<T>& memory, const TensorPtr<T>& y_prev,
                    const DropoutCtx& ctx, std::vector<double>* q2q_out = nullptr,
                    SamplingTrace* trace_out = nullptr) const;

  bool has_q2q() const { return q2q_enabled_; }

 private:
  bool q2q_enabled_ = true;
  Q2qAttention<T> q2q_;
  MsDeformAttn<T> p2q_;
  LayerNorm<T> norm1_, norm2_;
  Linear<T> ffn1_, ffn2_;
  Linear<T> head1_, head2_, head3_;  // coordinate MLP, final layer zero-initialized
};

template <typename T>
class TFPoseModel {
 public:
  TFPoseModel(const ModelConfig& cfg, ParamRegistry<T>& reg, std::mt19937_64& rng);

  /// Full forward pass. `dropout_rng` is only consulted in train mode with a
  /// nonzero dropout rate; inference never applies dropout.
  PredictionBundle<T> forward(const TensorPtr<T>& image, RunMode mode,
                              const IntrospectOptions& introspect = {},
                              std::mt19937_64* dropout_rng = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  TensorPtr<T> y0_logits() const { return y0_logits_; }

 private:
  TensorPtr<T> pixel_embedding(const std::vector<std::pair<int, int>>& shapes) const;

  ModelConfig cfg_;
  ToyBackbone<T> backbone_;
  LevelProjector<T> projector_;
  TensorPtr<T> level_embed_;    // L×c
  std::vector<EncoderLayer<T>> encoder_;
  TensorPtr<T> query_content_;  // K×c
  TensorPtr<T> query_pos_;      // K×c
  TensorPtr<T> y0_logits_;      // K×2
  std::vector<DecoderLayer<T>> decoder_;

  mutable std::mutex pe_mutex_;
  mutable std::map<std::vector<std::pair<int, int>>, TensorPtr<T>> pe_cache_;
};

}  // namespace tfpose

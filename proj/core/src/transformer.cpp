#include "tfpose/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "tfpose/ops.hpp"
#include "tfpose/rng.hpp"

namespace tfpose {

void ModelConfig::validate() const {
  if (keypoints < 1) throw std::invalid_argument("ModelConfig: keypoints must be >= 1");
  if (enc_layers < 0) throw std::invalid_argument("ModelConfig: enc_layers must be >= 0");
  if (dec_layers < 1) throw std::invalid_argument("ModelConfig: dec_layers must be >= 1");
  if (channels % heads != 0) {
    throw std::invalid_argument("ModelConfig: channels (" + std::to_string(channels) +
                                ") not divisible by heads (" + std::to_string(heads) + ")");
  }
  if (channels % 4 != 0) {
    throw std::invalid_argument("ModelConfig: channels must be divisible by 4 for the positional embedding");
  }
  if (heads < 1 || points < 1) throw std::invalid_argument("ModelConfig: heads and points must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("ModelConfig: dropout must be in [0,1)");
  for (int w : backbone_widths) {
    if (w < 1) throw std::invalid_argument("ModelConfig: backbone widths must be positive");
  }
  if (aux_channels < 1) throw std::invalid_argument("ModelConfig: aux_channels must be >= 1");
}

namespace {

template <typename T>
TensorPtr<T> maybe_dropout(const TensorPtr<T>& x, const DropoutCtx& ctx) {
  if (ctx.rate <= 0.0 || ctx.rng == nullptr) return x;
  return dropout(x, ctx.rate, *ctx.rng);
}

}  // namespace

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(int channels, int heads, ParamRegistry<T>& reg,
                                                  const std::string& prefix, std::mt19937_64& rng)
    : heads_(heads) {
  if (channels % heads != 0) {
    throw std::invalid_argument("MultiHeadSelfAttention: channels not divisible by heads");
  }
  q_ = Linear<T>(reg, prefix + ".q", channels, channels, rng);
  k_ = Linear<T>(reg, prefix + ".k", channels, channels, rng);
  v_ = Linear<T>(reg, prefix + ".v", channels, channels, rng);
  out_ = Linear<T>(reg, prefix + ".out", channels, channels, rng);
}

template <typename T>
TensorPtr<T> MultiHeadSelfAttention<T>::operator()(const TensorPtr<T>& content,
                                                   const TensorPtr<T>& pos,
                                                   std::vector<double>* attn_out) const {
  const int m = content->shape[0];
  const int c = content->shape[1];
  const int ch = c / heads_;
  auto qk_in = add(content, pos);
  auto q = q_(qk_in);
  auto k = k_(qk_in);
  auto v = v_(content);
  if (attn_out) attn_out->assign(static_cast<std::size_t>(m) * m, 0.0);

  std::vector<TensorPtr<T>> head_outs;
  for (int h = 0; h < heads_; ++h) {
    auto qh = slice_cols(q, h * ch, (h + 1) * ch);
    auto kh = slice_cols(k, h * ch, (h + 1) * ch);
    auto vh = slice_cols(v, h * ch, (h + 1) * ch);
    auto scores = scale(matmul(qh, transpose2d(kh)), 1.0 / std::sqrt(static_cast<double>(ch)));
    auto attn = softmax(scores, -1);
    if (attn_out) {
      for (std::size_t i = 0; i < attn->value.size(); ++i) {
        (*attn_out)[i] += static_cast<double>(attn->value[i]) / heads_;
      }
    }
    head_outs.push_back(matmul(attn, vh));
  }
  return out_(concat_cols(head_outs));
}

template <typename T>
Q2qAttention<T>::Q2qAttention(int channels, int heads, ParamRegistry<T>& reg,
                              const std::string& prefix, std::mt19937_64& rng)
    : mha_(channels, heads, reg, prefix + ".mha", rng) {
  norm_ = LayerNorm<T>(reg, prefix + ".norm", channels);
}

template <typename T>
TensorPtr<T> Q2qAttention<T>::operator()(const TensorPtr<T>& content, const TensorPtr<T>& pos,
                                         const DropoutCtx& ctx, std::vector<double>* attn_out) const {
  auto a = mha_(content, pos, attn_out);
  return norm_(add(content, maybe_dropout(a, ctx)));
}

template <typename T>
EncoderLayer<T>::EncoderLayer(const ModelConfig& cfg, ParamRegistry<T>& reg,
                              const std::string& prefix, std::mt19937_64& rng) {
  DeformAttnConfig dcfg{cfg.heads, cfg.points, cfg.levels(), cfg.channels};
  attn_ = MsDeformAttn<T>(dcfg, reg, prefix + ".attn", rng);
  norm1_ = LayerNorm<T>(reg, prefix + ".norm1", cfg.channels);
  ffn1_ = Linear<T>(reg, prefix + ".ffn1", cfg.channels, cfg.ffn(), rng);
  ffn2_ = Linear<T>(reg, prefix + ".ffn2", cfg.ffn(), cfg.channels, rng);
  norm2_ = LayerNorm<T>(reg, prefix + ".norm2", cfg.channels);
}

template <typename T>
TensorPtr<T> EncoderLayer<T>::operator()(const FlattenedMemory<T>& mem,
                                         const TensorPtr<T>& pixel_embed,
                                         const TensorPtr<T>& level_embed,
                                         const TensorPtr<T>& reference,
                                         const DropoutCtx& ctx) const {
  auto queries = add(add_level_embedding(mem.features, level_embed, mem.level_offsets), pixel_embed);
  auto a = attn_(queries, reference, mem);
  auto x = norm1_(add(mem.features, maybe_dropout(a, ctx)));
  auto f = ffn2_(maybe_dropout(relu(ffn1_(x)), ctx));
  return norm2_(add(x, maybe_dropout(f, ctx)));
}

template <typename T>
FlattenedMemory<T> encode(FlattenedMemory<T> mem, const TensorPtr<T>& pixel_embed,
                          const TensorPtr<T>& level_embed,
                          const std::vector<EncoderLayer<T>>& layers, const DropoutCtx& ctx) {
  if (layers.empty()) return mem;
  auto reference = encoder_reference_points(mem);
  for (const auto& layer : layers) {
    mem.features = layer(mem, pixel_embed, level_embed, reference, ctx);
  }
  return mem;
}

template <typename T>
DecoderLayer<T>::DecoderLayer(const ModelConfig& cfg, ParamRegistry<T>& reg,
                              const std::string& prefix, std::mt19937_64& rng)
    : q2q_enabled_(cfg.q2q) {
  if (q2q_enabled_) {
    q2q_ = Q2qAttention<T>(cfg.channels, cfg.heads, reg, prefix + ".q2q", rng);
  }
  DeformAttnConfig dcfg{cfg.heads, cfg.points, cfg.levels(), cfg.channels};
  p2q_ = MsDeformAttn<T>(dcfg, reg, prefix + ".p2q", rng);
  norm1_ = LayerNorm<T>(reg, prefix + ".norm1", cfg.channels);
  ffn1_ = Linear<T>(reg, prefix + ".ffn1", cfg.channels, cfg.ffn(), rng);
  ffn2_ = Linear<T>(reg, prefix + ".ffn2", cfg.ffn(), cfg.channels, rng);
  norm2_ = LayerNorm<T>(reg, prefix + ".norm2", cfg.channels);
  head1_ = Linear<T>(reg, prefix + ".head1", cfg.channels, cfg.channels, rng);
  head2_ = Linear<T>(reg, prefix + ".head2", cfg.channels, cfg.channels, rng);
  head3_ = Linear<T>(reg, prefix + ".head3", cfg.channels, 2, rng);
  // zero final layer: every layer's initial prediction starts at y_prev
  std::fill(head3_.weight->value.begin(), head3_.weight->value.end(), T(0));
  std::fill(head3_.bias->value.begin(), head3_.bias->value.end(), T(0));
}

template <typename T>
typename DecoderLayer<T>::Output DecoderLayer<T>::operator()(
    const TensorPtr<T>& queries, const TensorPtr<T>& query_pos, const FlattenedMemory<T>& memory,
    const TensorPtr<T>& y_prev, const DropoutCtx& ctx, std::vector<double>* q2q_out,
    SamplingTrace* trace_out) const {
  auto x = queries;
  if (q2q_enabled_) {
    x = q2q_(x, query_pos, ctx, q2q_out);
  }
  auto a = p2q_(add(x, query_pos), y_prev, memory, trace_out);
  x = norm1_(add(x, maybe_dropout(a, ctx)));
  auto f = ffn2_(maybe_dropout(relu(ffn1_(x)), ctx));
  x = norm2_(add(x, maybe_dropout(f, ctx)));
  auto delta = head3_(relu(head2_(relu(head1_(x)))));
  return {x, delta};
}

template <typename T>
TFPoseModel<T>::TFPoseModel(const ModelConfig& cfg, ParamRegistry<T>& reg, std::mt19937_64& rng)
    : cfg_(cfg),
      backbone_(cfg, reg, rng),
      projector_(
          [&] {
            std::vector<int> in;
            for (int l = cfg.include_c2 ? 0 : 1; l < 4; ++l) in.push_back(cfg.backbone_widths[l]);
            return in;
          }(),
          cfg.channels, reg, rng) {
  cfg_.validate();
  level_embed_ = reg.create("level_embed", {cfg.levels(), cfg.channels});
  fill_normal(level_embed_->value, rng, 0.0, 0.02);
  for (int e = 0; e < cfg.enc_layers; ++e) {
    encoder_.emplace_back(cfg, reg, "encoder." + std::to_string(e), rng);
  }
  query_content_ = reg.create("query_content", {cfg.keypoints, cfg.channels});
  fill_normal(query_content_->value, rng, 0.0, 0.02);
  query_pos_ = reg.create("query_pos", {cfg.keypoints, cfg.channels});
  fill_normal(query_pos_->value, rng, 0.0, 0.02);
  y0_logits_ = reg.create("y0_logits", {cfg.keypoints, 2});
  fill_normal(y0_logits_->value, rng, 0.0, 0.5);
  for (int d = 0; d < cfg.dec_layers; ++d) {
    decoder_.emplace_back(cfg, reg, "decoder." + std::to_string(d), rng);
  }
}

template <typename T>
TensorPtr<T> TFPoseModel<T>::pixel_embedding(const std::vector<std::pair<int, int>>& shapes) const {
  std::lock_guard<std::mutex> lock(pe_mutex_);
  auto it = pe_cache_.find(shapes);
  if (it == pe_cache_.end()) {
    it = pe_cache_.emplace(shapes, pixel_pos_embedding<T>(shapes, cfg_.channels)).first;
  }
  return it->second;
}

template <typename T>
PredictionBundle<T> TFPoseModel<T>::forward(const TensorPtr<T>& image, RunMode mode,
                                            const IntrospectOptions& introspect,
                                            std::mt19937_64* dropout_rng) const {
  DropoutCtx ctx;
  if (mode == RunMode::kTrain && cfg_.dropout > 0.0) {
    if (dropout_rng == nullptr) {
      throw std::invalid_argument("model forward: train mode with dropout requires an rng");
    }
    ctx = {cfg_.dropout, dropout_rng};
  }

  auto pyr = backbone_(image);
  if (!cfg_.include_c2) pyr.levels.erase(pyr.levels.begin());
  auto projected = projector_(pyr);
  auto mem = flatten_concat(projected);

  auto pixel = pixel_embedding(mem.level_shapes);
  mem = encode(mem, pixel, level_embed_, encoder_, ctx);

  PredictionBundle<T> bundle;
  if (mode == RunMode::kTrain) {
    bundle.memory_c5 = unflatten_level(mem, mem.levels() - 1);
  }

  auto y = sigmoid(y0_logits_);
  bundle.y0 = y;
  auto queries = query_content_;
  for (const auto& layer : decoder_) {
    std::vector<double> q2q_mat;
    SamplingTrace trace;
    auto out = layer(queries, query_pos_, mem, y,
                     ctx, (introspect.q2q_matrices && layer.has_q2q()) ? &q2q_mat : nullptr,
                     introspect.sampling_traces ? &trace : nullptr);
    queries = out.queries;
    y = refine_coords(y, out.delta);
    bundle.coords.push_back(y);
    bundle.deltas.push_back(out.delta);
    if (introspect.q2q_matrices) bundle.q2q_attn.push_back(std::move(q2q_mat));
    if (introspect.sampling_traces) bundle.p2q_traces.push_back(std::move(trace));
  }
  return bundle;
}

template FlattenedMemory<float> encode<float>(FlattenedMemory<float>, const TensorPtr<float>&,
                                              const TensorPtr<float>&,
                                              const std::vector<EncoderLayer<float>>&,
                                              const DropoutCtx&);
template FlattenedMemory<double> encode<double>(FlattenedMemory<double>, const TensorPtr<double>&,
                                                const TensorPtr<double>&,
                                                const std::vector<EncoderLayer<double>>&,
                                                const DropoutCtx&);
template class MultiHeadSelfAttention<float>;
template class MultiHeadSelfAttention<double>;
template class Q2qAttention<float>;
template class Q2qAttention<double>;
template class EncoderLayer<float>;
template class EncoderLayer<double>;
template class DecoderLayer<float>;
template class DecoderLayer<double>;
template class TFPoseModel<float>;
template class TFPoseModel<double>;

}  // namespace tfpose

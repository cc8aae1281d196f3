#include "tfpose/deform_attn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tfpose/ops.hpp"

namespace tfpose {

void DeformAttnConfig::validate() const {
  if (heads < 1 || points < 1 || levels < 1) {
    throw std::invalid_argument("DeformAttnConfig: heads, points and levels must be >= 1");
  }
  if (channels % heads != 0) {
    throw std::invalid_argument("DeformAttnConfig: channels (" + std::to_string(channels) +
                                ") not divisible by heads (" + std::to_string(heads) + ")");
  }
}

namespace {

template <typename T>
struct SampleCtx {
  int x0, y0;
  T fx, fy;
  int h, w;
};

template <typename T>
SampleCtx<T> sample_ctx(T lx, T ly, int h, int w) {
  const T gx = lx * static_cast<T>(w) - T(0.5);
  const T gy = ly * static_cast<T>(h) - T(0.5);
  SampleCtx<T> ctx;
  ctx.x0 = static_cast<int>(std::floor(gx));
  ctx.y0 = static_cast<int>(std::floor(gy));
  ctx.fx = gx - static_cast<T>(ctx.x0);
  ctx.fy = gy - static_cast<T>(ctx.y0);
  ctx.h = h;
  ctx.w = w;
  return ctx;
}

}  // namespace

template <typename T>
TensorPtr<T> ms_deform_attn_core(const TensorPtr<T>& value,
                                 const std::vector<std::pair<int, int>>& level_shapes,
                                 const std::vector<int>& level_offsets,
                                 const TensorPtr<T>& reference, const TensorPtr<T>& offsets,
                                 const TensorPtr<T>& weights, int heads, SamplingTrace* trace) {
  const int levels = static_cast<int>(level_shapes.size());
  if (value->shape.size() != 2 || reference->shape.size() != 2 || reference->shape[1] != 2) {
    throw std::invalid_argument("ms_deform_attn_core: value must be n×c and reference m×2");
  }
  if (static_cast<int>(level_offsets.size()) != levels + 1 || value->shape[0] != level_offsets.back()) {
    throw std::invalid_argument("ms_deform_attn_core: level offsets do not match the value rows");
  }
  const int c = value->shape[1];
  const int m = reference->shape[0];
  if (c % heads != 0) throw std::invalid_argument("ms_deform_attn_core: channels not divisible by heads");
  const int ch = c / heads;
  const int lp = offsets->shape[1] / (heads * 2);
  const int points = levels > 0 ? lp / levels : 0;
  if (offsets->shape[0] != m || offsets->shape[1] != heads * levels * points * 2 || points < 1) {
    throw_shape_mismatch("ms_deform_attn_core", offsets->shape, {m, heads * levels * 2});
  }
  if (weights->shape[1] != heads * levels * points || weights->shape[0] != m) {
    throw_shape_mismatch("ms_deform_attn_core", weights->shape, {m, heads * levels * points});
  }

  auto out = detail::op_node<T>("ms_deform_attn_core", {m, c}, {value, offsets, weights, reference});
  if (trace) {
    trace->queries = m;
    trace->heads = heads;
    trace->levels = levels;
    trace->points = points;
    trace->level_shapes = level_shapes;
    trace->entries.assign(static_cast<std::size_t>(m) * heads * levels * points, SamplePoint{});
  }

  const int hlp = heads * levels * points;
  for (int q = 0; q < m; ++q) {
    const T rx = std::min(std::max(reference->value[2 * q], T(0)), T(1));
    const T ry = std::min(std::max(reference->value[2 * q + 1], T(0)), T(1));
    const T* off = offsets->value.data() + static_cast<std::size_t>(q) * hlp * 2;
    const T* wgt = weights->value.data() + static_cast<std::size_t>(q) * hlp;
    T* orow = out->value.data() + static_cast<std::size_t>(q) * c;
    for (int hd = 0; hd < heads; ++hd) {
      for (int l = 0; l < levels; ++l) {
        const auto [lh, lw] = level_shapes[l];
        const T* base = value->value.data() + static_cast<std::size_t>(level_offsets[l]) * c + hd * ch;
        for (int p = 0; p < points; ++p) {
          const int k = (hd * levels + l) * points + p;
          const T lx = rx + off[2 * k] / static_cast<T>(lw);
          const T ly = ry + off[2 * k + 1] / static_cast<T>(lh);
          const T wv = wgt[k];
          if (trace) {
            auto& e = trace->entries[static_cast<std::size_t>(q) * hlp + k];
            e.x = static_cast<double>(lx);
            e.y = static_cast<double>(ly);
            e.weight = static_cast<double>(wv);
          }
          const auto ctx = sample_ctx(lx, ly, lh, lw);
          const T wx[2] = {T(1) - ctx.fx, ctx.fx};
          const T wy[2] = {T(1) - ctx.fy, ctx.fy};
          for (int dy = 0; dy < 2; ++dy) {
            const int yy = ctx.y0 + dy;
            if (yy < 0 || yy >= lh) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int xx = ctx.x0 + dx;
              if (xx < 0 || xx >= lw) continue;
              const T cw = wv * wy[dy] * wx[dx];
              const T* vrow = base + (static_cast<std::size_t>(yy) * lw + xx) * c;
              T* od = orow + hd * ch;
              for (int j = 0; j < ch; ++j) od[j] += cw * vrow[j];
            }
          }
        }
      }
    }
  }

  if (out->requires_grad) {
    auto* pv = value.get();
    auto* po = offsets.get();
    auto* pw = weights.get();
    auto* pr = reference.get();
    out->backward_fn = [pv, po, pw, pr, level_shapes, level_offsets, heads, levels, points, m, c,
                        ch, hlp](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      std::vector<T>* gv = pv->requires_grad ? &g.of(pv) : nullptr;
      std::vector<T>* goff = po->requires_grad ? &g.of(po) : nullptr;
      std::vector<T>* gw = pw->requires_grad ? &g.of(pw) : nullptr;
      std::vector<T>* gr = pr->requires_grad ? &g.of(pr) : nullptr;
      for (int q = 0; q < m; ++q) {
        const T rx_raw = pr->value[2 * q];
        const T ry_raw = pr->value[2 * q + 1];
        const T rx = std::min(std::max(rx_raw, T(0)), T(1));
        const T ry = std::min(std::max(ry_raw, T(0)), T(1));
        const T* off = po->value.data() + static_cast<std::size_t>(q) * hlp * 2;
        const T* wgt = pw->value.data() + static_cast<std::size_t>(q) * hlp;
        const T* gorow = go.data() + static_cast<std::size_t>(q) * c;
        for (int hd = 0; hd < heads; ++hd) {
          const T* god = gorow + hd * ch;
          for (int l = 0; l < levels; ++l) {
            const auto [lh, lw] = level_shapes[l];
            const T* base = pv->value.data() + static_cast<std::size_t>(level_offsets[l]) * c + hd * ch;
            T* gbase = gv ? gv->data() + static_cast<std::size_t>(level_offsets[l]) * c + hd * ch : nullptr;
            for (int p = 0; p < points; ++p) {
              const int k = (hd * levels + l) * points + p;
              const T lx = rx + off[2 * k] / static_cast<T>(lw);
              const T ly = ry + off[2 * k + 1] / static_cast<T>(lh);
              const T wv = wgt[k];
              const auto ctx = sample_ctx(lx, ly, lh, lw);
              const T wx[2] = {T(1) - ctx.fx, ctx.fx};
              const T wy[2] = {T(1) - ctx.fy, ctx.fy};
              auto corner = [&](int dy, int dx, int j) -> T {
                const int yy = ctx.y0 + dy, xx = ctx.x0 + dx;
                if (yy < 0 || yy >= lh || xx < 0 || xx >= lw) return T(0);
                return base[(static_cast<std::size_t>(yy) * lw + xx) * c + j];
              };
              T dot_sample = 0;  // go · sample, for the weight gradient
              T dgx = 0, dgy = 0;
              const bool need_loc = goff || gr;
              if (gw || need_loc) {
                for (int j = 0; j < ch; ++j) {
                  const T v00 = corner(0, 0, j), v01 = corner(0, 1, j);
                  const T v10 = corner(1, 0, j), v11 = corner(1, 1, j);
                  const T sample = wy[0] * (wx[0] * v00 + wx[1] * v01) + wy[1] * (wx[0] * v10 + wx[1] * v11);
                  dot_sample += god[j] * sample;
                  if (need_loc) {
                    dgx += god[j] * (wy[0] * (v01 - v00) + wy[1] * (v11 - v10));
                    dgy += god[j] * (wx[0] * (v10 - v00) + wx[1] * (v11 - v01));
                  }
                }
              }
              if (gw) (*gw)[static_cast<std::size_t>(q) * hlp + k] += dot_sample;
              if (need_loc) {
                // gx = (ref + off/W)·W - 0.5, so d gx/d off_x = 1, d gx/d ref_x = W
                const T dlx = wv * dgx;
                const T dly = wv * dgy;
                if (goff) {
                  (*goff)[static_cast<std::size_t>(q) * hlp * 2 + 2 * k] += dlx;
                  (*goff)[static_cast<std::size_t>(q) * hlp * 2 + 2 * k + 1] += dly;
                }
                if (gr) {
                  if (rx_raw >= T(0) && rx_raw <= T(1))
                    (*gr)[2 * q] += dlx * static_cast<T>(lw);
                  if (ry_raw >= T(0) && ry_raw <= T(1))
                    (*gr)[2 * q + 1] += dly * static_cast<T>(lh);
                }
              }
              if (gbase) {
                for (int dy = 0; dy < 2; ++dy) {
                  const int yy = ctx.y0 + dy;
                  if (yy < 0 || yy >= lh) continue;
                  for (int dx = 0; dx < 2; ++dx) {
                    const int xx = ctx.x0 + dx;
                    if (xx < 0 || xx >= lw) continue;
                    const T cw = wv * wy[dy] * wx[dx];
                    T* grow = gbase + (static_cast<std::size_t>(yy) * lw + xx) * c;
                    for (int j = 0; j < ch; ++j) grow[j] += cw * god[j];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
MsDeformAttn<T>::MsDeformAttn(const DeformAttnConfig& cfg, ParamRegistry<T>& reg,
                              const std::string& prefix, std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int hlp = cfg.heads * cfg.levels * cfg.points;
  value_proj_ = Linear<T>(reg, prefix + ".value_proj", cfg.channels, cfg.channels, rng);
  output_proj_ = Linear<T>(reg, prefix + ".output_proj", cfg.channels, cfg.channels, rng);
  offset_proj_ = Linear<T>(reg, prefix + ".offset_proj", cfg.channels, hlp * 2, rng);
  weight_proj_ = Linear<T>(reg, prefix + ".weight_proj", cfg.channels, hlp, rng);

  // Offsets start at a small radial pattern per head (radius grows with the
  // point index), weights start uniform: both projections have zero weights.
  std::fill(offset_proj_.weight->value.begin(), offset_proj_.weight->value.end(), T(0));
  std::fill(weight_proj_.weight->value.begin(), weight_proj_.weight->value.end(), T(0));
  std::fill(weight_proj_.bias->value.begin(), weight_proj_.bias->value.end(), T(0));
  for (int hd = 0; hd < cfg.heads; ++hd) {
    const double angle = 2.0 * std::numbers::pi * hd / cfg.heads;
    for (int l = 0; l < cfg.levels; ++l) {
      for (int p = 0; p < cfg.points; ++p) {
        const int k = (hd * cfg.levels + l) * cfg.points + p;
        offset_proj_.bias->value[2 * k] = static_cast<T>((p + 1) * std::cos(angle));
        offset_proj_.bias->value[2 * k + 1] = static_cast<T>((p + 1) * std::sin(angle));
      }
    }
  }
}

template <typename T>
TensorPtr<T> MsDeformAttn<T>::operator()(const TensorPtr<T>& queries, const TensorPtr<T>& reference,
                                         const FlattenedMemory<T>& memory,
                                         SamplingTrace* trace) const {
  if (memory.levels() != cfg_.levels) {
    throw std::invalid_argument("msdeform_attn: memory has " + std::to_string(memory.levels()) +
                                " levels, config expects " + std::to_string(cfg_.levels));
  }
  const int m = queries->shape[0];
  auto value = value_proj_(memory.features);
  auto off = offset_proj_(queries);
  auto logits = weight_proj_(queries);
  // normalize over levels×points independently per (query, head)
  auto w = reshape(softmax(reshape(logits, {m * cfg_.heads, cfg_.levels * cfg_.points}), -1),
                   {m, cfg_.heads * cfg_.levels * cfg_.points});
  auto agg = ms_deform_attn_core(value, memory.level_shapes, memory.level_offsets, reference, off, w,
                                 cfg_.heads, trace);
  return output_proj_(agg);
}

template <typename T>
TensorPtr<T> encoder_reference_points(const FlattenedMemory<T>& memory) {
  auto out = make_tensor<T>({memory.n, 2});
  std::size_t at = 0;
  for (const auto& [h, w] : memory.level_shapes) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out->value[at++] = static_cast<T>((x + 0.5) / w);
        out->value[at++] = static_cast<T>((y + 0.5) / h);
      }
    }
  }
  return out;
}

template TensorPtr<float> ms_deform_attn_core<float>(const TensorPtr<float>&,
                                                     const std::vector<std::pair<int, int>>&,
                                                     const std::vector<int>&, const TensorPtr<float>&,
                                                     const TensorPtr<float>&, const TensorPtr<float>&,
                                                     int, SamplingTrace*);
template TensorPtr<double> ms_deform_attn_core<double>(const TensorPtr<double>&,
                                                       const std::vector<std::pair<int, int>>&,
                                                       const std::vector<int>&, const TensorPtr<double>&,
                                                       const TensorPtr<double>&, const TensorPtr<double>&,
                                                       int, SamplingTrace*);
template class MsDeformAttn<float>;
template class MsDeformAttn<double>;
template TensorPtr<float> encoder_reference_points<float>(const FlattenedMemory<float>&);
template TensorPtr<double> encoder_reference_points<double>(const FlattenedMemory<double>&);

}  // namespace tfpose

#include "tfpose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tfpose {

namespace {

template <typename T>
void require_2d(const char* op, const TensorPtr<T>& t) {
  if (t->shape.size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor, got " +
                                shape_to_string(t->shape));
  }
}

// c (m×n) += a (m×k) @ b (k×n)
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transposed_copy(const T* x, int rows, int cols) {
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(j) * rows + i] = x[static_cast<std::size_t>(i) * cols + j];
  return out;
}

}  // namespace

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!shapes_equal(a->shape, b->shape)) throw_shape_mismatch("add", a->shape, b->shape);
  auto out = detail::op_node<T>("add", a->shape, {a, b});
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] + b->value[i];
  if (out->requires_grad) {
    auto* pa = a.get();
    auto* pb = b.get();
    out->backward_fn = [pa, pb](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      if (pa->requires_grad) {
        auto& ga = g.of(pa);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (pb->requires_grad) {
        auto& gb = g.of(pb);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!shapes_equal(a->shape, b->shape)) throw_shape_mismatch("sub", a->shape, b->shape);
  auto out = detail::op_node<T>("sub", a->shape, {a, b});
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] - b->value[i];
  if (out->requires_grad) {
    auto* pa = a.get();
    auto* pb = b.get();
    out->backward_fn = [pa, pb](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      if (pa->requires_grad) {
        auto& ga = g.of(pa);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (pb->requires_grad) {
        auto& gb = g.of(pb);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!shapes_equal(a->shape, b->shape)) throw_shape_mismatch("mul", a->shape, b->shape);
  auto out = detail::op_node<T>("mul", a->shape, {a, b});
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] * b->value[i];
  if (out->requires_grad) {
    auto* pa = a.get();
    auto* pb = b.get();
    out->backward_fn = [pa, pb](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      if (pa->requires_grad) {
        auto& ga = g.of(pa);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        auto& gb = g.of(pb);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * pa->value[i];
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& a, double s) {
  auto out = detail::op_node<T>("scale", a->shape, {a});
  const T ts = static_cast<T>(s);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] * ts;
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa, ts](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * ts;
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& a) {
  auto out = detail::op_node<T>("relu", a->shape, {a});
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (pa->value[i] > T(0)) ga[i] += go[i];
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> sigmoid(const TensorPtr<T>& a) {
  auto out = detail::op_node<T>("sigmoid", a->shape, {a});
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = T(1) / (T(1) + std::exp(-a->value[i]));
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T s = self->value[i];
        ga[i] += go[i] * s * (T(1) - s);
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> absolute(const TensorPtr<T>& a) {
  auto out = detail::op_node<T>("absolute", a->shape, {a});
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = std::abs(a->value[i]);
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T x = pa->value[i];
        // subgradient 0 at x == 0
        ga[i] += x > T(0) ? go[i] : (x < T(0) ? -go[i] : T(0));
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> clamp(const TensorPtr<T>& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  auto out = detail::op_node<T>("clamp", a->shape, {a});
  const T tlo = static_cast<T>(lo), thi = static_cast<T>(hi);
  const std::int64_t n = out->size();
  for (std::int64_t i = 0; i < n; ++i) out->value[i] = std::min(std::max(a->value[i], tlo), thi);
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa, tlo, thi](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T x = pa->value[i];
        if (x >= tlo && x <= thi) ga[i] += go[i];
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> dropout(const TensorPtr<T>& a, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return a;
  auto out = detail::op_node<T>("dropout", a->shape, {a});
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<T> coef(a->value.size());
  for (std::size_t i = 0; i < coef.size(); ++i) coef[i] = dist(rng) < rate ? T(0) : keep_scale;
  for (std::size_t i = 0; i < coef.size(); ++i) out->value[i] = a->value[i] * coef[i];
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa, coef = std::move(coef)](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * coef[i];
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& a, Shape shape) {
  if (shape_numel(shape) != a->size()) throw_shape_mismatch("reshape", a->shape, shape);
  auto out = detail::op_node<T>("reshape", std::move(shape), {a});
  out->value = a->value;
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> transpose2d(const TensorPtr<T>& a) {
  require_2d("transpose2d", a);
  const int m = a->shape[0], n = a->shape[1];
  auto out = detail::op_node<T>("transpose2d", {n, m}, {a});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->value[static_cast<std::size_t>(j) * m + i] = a->value[static_cast<std::size_t>(i) * n + j];
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa, m, n](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) ga[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> concat_rows(const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  int cols = -1, rows = 0;
  for (const auto& p : parts) {
    require_2d("concat_rows", p);
    if (cols < 0) cols = p->shape[1];
    if (p->shape[1] != cols) throw_shape_mismatch("concat_rows", parts[0]->shape, p->shape);
    rows += p->shape[0];
  }
  auto out = detail::op_node<T>("concat_rows", {rows, cols}, parts);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p->value.begin(), p->value.end(), out->value.begin() + at);
    at += p->value.size();
  }
  if (out->requires_grad) {
    std::vector<TensorNode<T>*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) raw.push_back(p.get());
    out->backward_fn = [raw](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      std::size_t at = 0;
      for (auto* p : raw) {
        if (p->requires_grad) {
          auto& gp = g.of(p);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[at + i];
        }
        at += p->value.size();
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> concat_cols(const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  int rows = -1, cols = 0;
  for (const auto& p : parts) {
    require_2d("concat_cols", p);
    if (rows < 0) rows = p->shape[0];
    if (p->shape[0] != rows) throw_shape_mismatch("concat_cols", parts[0]->shape, p->shape);
    cols += p->shape[1];
  }
  auto out = detail::op_node<T>("concat_cols", {rows, cols}, parts);
  int at = 0;
  for (const auto& p : parts) {
    const int w = p->shape[1];
    for (int i = 0; i < rows; ++i)
      std::copy(p->value.begin() + static_cast<std::size_t>(i) * w,
                p->value.begin() + static_cast<std::size_t>(i + 1) * w,
                out->value.begin() + static_cast<std::size_t>(i) * cols + at);
    at += w;
  }
  if (out->requires_grad) {
    std::vector<TensorNode<T>*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) raw.push_back(p.get());
    out->backward_fn = [raw, rows, cols](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      int at = 0;
      for (auto* p : raw) {
        const int w = p->shape[1];
        if (p->requires_grad) {
          auto& gp = g.of(p);
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j)
              gp[static_cast<std::size_t>(i) * w + j] += go[static_cast<std::size_t>(i) * cols + at + j];
        }
        at += w;
      }
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> slice_rows(const TensorPtr<T>& a, int r0, int r1) {
  require_2d("slice_rows", a);
  const int m = a->shape[0], n = a->shape[1];
  if (r0 < 0 || r1 > m || r0 >= r1) throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for " + shape_to_string(a->shape));
  auto out = detail::op_node<T>("slice_rows", {r1 - r0, n}, {a});
  std::copy(a->value.begin() + static_cast<std::size_t>(r0) * n, a->value.begin() + static_cast<std::size_t>(r1) * n,
            out->value.begin());
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa, r0, n](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (std::size_t i = 0; i < go.size(); ++i) ga[static_cast<std::size_t>(r0) * n + i] += go[i];
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> slice_cols(const TensorPtr<T>& a, int c0, int c1) {
  require_2d("slice_cols", a);
  const int m = a->shape[0], n = a->shape[1];
  if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) + ") for " + shape_to_string(a->shape));
  const int w = c1 - c0;
  auto out = detail::op_node<T>("slice_cols", {m, w}, {a});
  for (int i = 0; i < m; ++i)
    std::copy(a->value.begin() + static_cast<std::size_t>(i) * n + c0,
              a->value.begin() + static_cast<std::size_t>(i) * n + c1,
              out->value.begin() + static_cast<std::size_t>(i) * w);
  if (out->requires_grad) {
    auto* pa = a.get();
    out->backward_fn = [pa, c0, n, w, m](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& ga = g.of(pa);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) ga[static_cast<std::size_t>(i) * n + c0 + j] += go[static_cast<std::size_t>(i) * w + j];
    };
  }
  return out;
}

template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a->shape[1] != b->shape[0]) throw_shape_mismatch("matmul", a->shape, b->shape);
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = detail::op_node<T>("matmul", {m, n}, {a, b});
  gemm_acc(a->value.data(), b->value.data(), out->value.data(), m, k, n);
  if (out->requires_grad) {
    auto* pa = a.get();
    auto* pb = b.get();
    out->backward_fn = [pa, pb, m, k, n](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      if (pa->requires_grad) {
        auto bt = transposed_copy(pb->value.data(), k, n);  // n×k
        gemm_acc(go.data(), bt.data(), g.of(pa).data(), m, n, k);
      }
      if (pb->requires_grad) {
        auto at = transposed_copy(pa->value.data(), m, k);  // k×m
        gemm_acc(at.data(), go.data(), g.of(pb).data(), k, m, n);
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> add_row_vector(const TensorPtr<T>& x, const TensorPtr<T>& v) {
  require_2d("add_row_vector", x);
  if (v->shape.size() != 1 || v->shape[0] != x->shape[1]) throw_shape_mismatch("add_row_vector", x->shape, v->shape);
  const int m = x->shape[0], n = x->shape[1];
  auto out = detail::op_node<T>("add_row_vector", x->shape, {x, v});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<std::size_t>(i) * n + j] = x->value[static_cast<std::size_t>(i) * n + j] + v->value[j];
  if (out->requires_grad) {
    auto* px = x.get();
    auto* pv = v.get();
    out->backward_fn = [px, pv, m, n](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      if (px->requires_grad) {
        auto& gx = g.of(px);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (pv->requires_grad) {
        auto& gv = g.of(pv);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gv[j] += go[static_cast<std::size_t>(i) * n + j];
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> layer_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                        double eps) {
  if (x->shape.empty()) throw std::invalid_argument("layer_norm: scalar input");
  const int n = x->shape.back();
  if (gamma->shape.size() != 1 || gamma->shape[0] != n) throw_shape_mismatch("layer_norm", x->shape, gamma->shape);
  if (beta->shape.size() != 1 || beta->shape[0] != n) throw_shape_mismatch("layer_norm", x->shape, beta->shape);
  const std::int64_t outer = x->size() / n;
  auto out = detail::op_node<T>("layer_norm", x->shape, {x, gamma, beta});
  std::vector<T> inv_std(outer), mean(outer);
  for (std::int64_t r = 0; r < outer; ++r) {
    const T* row = x->value.data() + r * n;
    T mu = 0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    mean[r] = mu;
    inv_std[r] = inv;
    T* orow = out->value.data() + r * n;
    for (int j = 0; j < n; ++j) orow[j] = (row[j] - mu) * inv * gamma->value[j] + beta->value[j];
  }
  if (out->requires_grad) {
    auto* px = x.get();
    auto* pg = gamma.get();
    auto* pb = beta.get();
    out->backward_fn = [px, pg, pb, n, outer, mean = std::move(mean), inv_std = std::move(inv_std)](
                           const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      std::vector<T>* gx = px->requires_grad ? &g.of(px) : nullptr;
      std::vector<T>* gg = pg->requires_grad ? &g.of(pg) : nullptr;
      std::vector<T>* gb = pb->requires_grad ? &g.of(pb) : nullptr;
      for (std::int64_t r = 0; r < outer; ++r) {
        const T* row = px->value.data() + r * n;
        const T* gorow = go.data() + r * n;
        const T mu = mean[r], inv = inv_std[r];
        if (gg || gb) {
          for (int j = 0; j < n; ++j) {
            const T xhat = (row[j] - mu) * inv;
            if (gg) (*gg)[j] += gorow[j] * xhat;
            if (gb) (*gb)[j] += gorow[j];
          }
        }
        if (gx) {
          // dxhat = go * gamma; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          T s1 = 0, s2 = 0;
          for (int j = 0; j < n; ++j) {
            const T dxhat = gorow[j] * pg->value[j];
            const T xhat = (row[j] - mu) * inv;
            s1 += dxhat;
            s2 += dxhat * xhat;
          }
          s1 /= static_cast<T>(n);
          s2 /= static_cast<T>(n);
          T* gxrow = gx->data() + r * n;
          for (int j = 0; j < n; ++j) {
            const T dxhat = gorow[j] * pg->value[j];
            const T xhat = (row[j] - mu) * inv;
            gxrow[j] += inv * (dxhat - s1 - xhat * s2);
          }
        }
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> softmax(const TensorPtr<T>& x, int axis) {
  const int rank = static_cast<int>(x->shape.size());
  if (rank == 0) throw std::invalid_argument("softmax: scalar input");
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: axis out of range for " + shape_to_string(x->shape));
  std::int64_t outer = 1, inner = 1;
  const int len = x->shape[axis];
  for (int i = 0; i < axis; ++i) outer *= x->shape[i];
  for (int i = axis + 1; i < rank; ++i) inner *= x->shape[i];
  auto out = detail::op_node<T>("softmax", x->shape, {x});
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      T mx = x->value[base];
      for (int j = 1; j < len; ++j) mx = std::max(mx, x->value[base + j * inner]);
      T sum = 0;
      for (int j = 0; j < len; ++j) {
        const T e = std::exp(x->value[base + j * inner] - mx);
        out->value[base + j * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < len; ++j) out->value[base + j * inner] *= inv;
    }
  }
  if (out->requires_grad) {
    auto* px = x.get();
    out->backward_fn = [px, outer, inner, len](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      auto& gx = g.of(px);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * len * inner + in;
          T dot = 0;
          for (int j = 0; j < len; ++j) dot += go[base + j * inner] * self->value[base + j * inner];
          for (int j = 0; j < len; ++j) {
            const T y = self->value[base + j * inner];
            gx[base + j * inner] += y * (go[base + j * inner] - dot);
          }
        }
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& bias,
                    int stride, int pad) {
  if (x->shape.size() != 3) throw std::invalid_argument("conv2d: input must be H×W×C, got " + shape_to_string(x->shape));
  if (w->shape.size() != 4) throw std::invalid_argument("conv2d: kernel must be kh×kw×Cin×Cout, got " + shape_to_string(w->shape));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const int h = x->shape[0], wd = x->shape[1], ci = x->shape[2];
  const int kh = w->shape[0], kw = w->shape[1], co = w->shape[3];
  if (w->shape[2] != ci) throw_shape_mismatch("conv2d", x->shape, w->shape);
  if (bias->shape.size() != 1 || bias->shape[0] != co) throw_shape_mismatch("conv2d", w->shape, bias->shape);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

  auto out = detail::op_node<T>("conv2d", {oh, ow, co}, {x, w, bias});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      T* orow = out->value.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
      for (int c = 0; c < co; ++c) orow[c] = bias->value[c];
    }
  for (int oy = 0; oy < oh; ++oy) {
    for (int ky = 0; ky < kh; ++ky) {
      const int iy = oy * stride - pad + ky;
      if (iy < 0 || iy >= h) continue;
      for (int ox = 0; ox < ow; ++ox) {
        T* orow = out->value.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= wd) continue;
          const T* xrow = x->value.data() + (static_cast<std::size_t>(iy) * wd + ix) * ci;
          const T* wrow = w->value.data() + (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const T xv = xrow[c];
            const T* wc = wrow + static_cast<std::size_t>(c) * co;
            for (int d = 0; d < co; ++d) orow[d] += xv * wc[d];
          }
        }
      }
    }
  }
  if (out->requires_grad) {
    auto* px = x.get();
    auto* pw = w.get();
    auto* pb = bias.get();
    out->backward_fn = [px, pw, pb, h, wd, ci, kh, kw, co, oh, ow, stride, pad](
                           const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      std::vector<T>* gx = px->requires_grad ? &g.of(px) : nullptr;
      std::vector<T>* gw = pw->requires_grad ? &g.of(pw) : nullptr;
      std::vector<T>* gb = pb->requires_grad ? &g.of(pb) : nullptr;
      if (gb) {
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const T* gorow = go.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
            for (int d = 0; d < co; ++d) (*gb)[d] += gorow[d];
          }
      }
      // co-major weight copy turns the input-gradient inner loop into a
      // contiguous accumulation instead of a reduction
      std::vector<T> wt;
      if (gx) {
        wt.resize(static_cast<std::size_t>(kh) * kw * ci * co);
        for (int kk = 0; kk < kh * kw; ++kk)
          for (int c = 0; c < ci; ++c)
            for (int d = 0; d < co; ++d)
              wt[(static_cast<std::size_t>(kk) * co + d) * ci + c] =
                  pw->value[(static_cast<std::size_t>(kk) * ci + c) * co + d];
      }
      for (int oy = 0; oy < oh; ++oy) {
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const T* gorow = go.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              const T* xrow = px->value.data() + (static_cast<std::size_t>(iy) * wd + ix) * ci;
              if (gx) {
                T* gxrow = gx->data() + (static_cast<std::size_t>(iy) * wd + ix) * ci;
                const T* wk = wt.data() + (static_cast<std::size_t>(ky) * kw + kx) * co * ci;
                for (int d = 0; d < co; ++d) {
                  const T gv = gorow[d];
                  const T* wc = wk + static_cast<std::size_t>(d) * ci;
                  for (int c = 0; c < ci; ++c) gxrow[c] += gv * wc[c];
                }
              }
              if (gw) {
                T* gwrow = gw->data() + (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
                for (int c = 0; c < ci; ++c) {
                  const T xv = xrow[c];
                  T* gwc = gwrow + static_cast<std::size_t>(c) * co;
                  for (int d = 0; d < co; ++d) gwc[d] += xv * gorow[d];
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
TensorPtr<T> conv_transpose2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& bias,
                              int stride, int pad) {
  if (x->shape.size() != 3) throw std::invalid_argument("conv_transpose2d: input must be H×W×C, got " + shape_to_string(x->shape));
  if (w->shape.size() != 4) throw std::invalid_argument("conv_transpose2d: kernel must be kh×kw×Cin×Cout, got " + shape_to_string(w->shape));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv_transpose2d: bad stride/pad");
  const int h = x->shape[0], wd = x->shape[1], ci = x->shape[2];
  const int kh = w->shape[0], kw = w->shape[1], co = w->shape[3];
  if (w->shape[2] != ci) throw_shape_mismatch("conv_transpose2d", x->shape, w->shape);
  if (bias->shape.size() != 1 || bias->shape[0] != co) throw_shape_mismatch("conv_transpose2d", w->shape, bias->shape);
  const int oh = (h - 1) * stride - 2 * pad + kh;
  const int ow = (wd - 1) * stride - 2 * pad + kw;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv_transpose2d: empty output");

  auto out = detail::op_node<T>("conv_transpose2d", {oh, ow, co}, {x, w, bias});
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      T* orow = out->value.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
      for (int c = 0; c < co; ++c) orow[c] = bias->value[c];
    }
  for (int y = 0; y < h; ++y) {
    for (int ky = 0; ky < kh; ++ky) {
      const int oy = y * stride - pad + ky;
      if (oy < 0 || oy >= oh) continue;
      for (int xx = 0; xx < wd; ++xx) {
        const T* xrow = x->value.data() + (static_cast<std::size_t>(y) * wd + xx) * ci;
        for (int kx = 0; kx < kw; ++kx) {
          const int ox = xx * stride - pad + kx;
          if (ox < 0 || ox >= ow) continue;
          T* orow = out->value.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
          const T* wrow = w->value.data() + (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const T xv = xrow[c];
            const T* wc = wrow + static_cast<std::size_t>(c) * co;
            for (int d = 0; d < co; ++d) orow[d] += xv * wc[d];
          }
        }
      }
    }
  }
  if (out->requires_grad) {
    auto* px = x.get();
    auto* pw = w.get();
    auto* pb = bias.get();
    out->backward_fn = [px, pw, pb, h, wd, ci, kh, kw, co, oh, ow, stride, pad](
                           const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      std::vector<T>* gx = px->requires_grad ? &g.of(px) : nullptr;
      std::vector<T>* gw = pw->requires_grad ? &g.of(pw) : nullptr;
      std::vector<T>* gb = pb->requires_grad ? &g.of(pb) : nullptr;
      if (gb) {
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const T* gorow = go.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
            for (int d = 0; d < co; ++d) (*gb)[d] += gorow[d];
          }
      }
      for (int y = 0; y < h; ++y) {
        for (int ky = 0; ky < kh; ++ky) {
          const int oy = y * stride - pad + ky;
          if (oy < 0 || oy >= oh) continue;
          for (int xx = 0; xx < wd; ++xx) {
            const T* xrow = px->value.data() + (static_cast<std::size_t>(y) * wd + xx) * ci;
            T* gxrow = gx ? gx->data() + (static_cast<std::size_t>(y) * wd + xx) * ci : nullptr;
            for (int kx = 0; kx < kw; ++kx) {
              const int ox = xx * stride - pad + kx;
              if (ox < 0 || ox >= ow) continue;
              const T* gorow = go.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
              const T* wrow = pw->value.data() + (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
              if (gx) {
                for (int c = 0; c < ci; ++c) {
                  const T* wc = wrow + static_cast<std::size_t>(c) * co;
                  T acc = 0;
                  for (int d = 0; d < co; ++d) acc += wc[d] * gorow[d];
                  gxrow[c] += acc;
                }
              }
              if (gw) {
                T* gwrow = gw->data() + (static_cast<std::size_t>(ky) * kw + kx) * ci * co;
                for (int c = 0; c < ci; ++c) {
                  const T xv = xrow[c];
                  T* gwc = gwrow + static_cast<std::size_t>(c) * co;
                  for (int d = 0; d < co; ++d) gwc[d] += xv * gorow[d];
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
TensorPtr<T> sum_all(const TensorPtr<T>& x) {
  auto out = detail::op_node<T>("sum_all", {1}, {x});
  T acc = 0;
  for (T v : x->value) acc += v;
  out->value[0] = acc;
  if (out->requires_grad) {
    auto* px = x.get();
    out->backward_fn = [px](const TensorNode<T>* self, Gradients<T>& g) {
      const T go = g.of(self)[0];
      auto& gx = g.of(px);
      for (auto& v : gx) v += go;
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> mean_all(const TensorPtr<T>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x->size()));
}

template <typename T>
TensorPtr<T> weighted_sum(const TensorPtr<T>& x, const std::vector<T>& weights) {
  if (weights.size() != x->value.size()) {
    throw std::invalid_argument("weighted_sum: weight count " + std::to_string(weights.size()) +
                                " does not match tensor " + shape_to_string(x->shape));
  }
  auto out = detail::op_node<T>("weighted_sum", {1}, {x});
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x->value[i];
  out->value[0] = acc;
  if (out->requires_grad) {
    auto* px = x.get();
    out->backward_fn = [px, weights](const TensorNode<T>* self, Gradients<T>& g) {
      const T go = g.of(self)[0];
      auto& gx = g.of(px);
      for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += go * weights[i];
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> add_level_embedding(const TensorPtr<T>& x, const TensorPtr<T>& level_embed,
                                 const std::vector<int>& offsets) {
  require_2d("add_level_embedding", x);
  require_2d("add_level_embedding", level_embed);
  const int n = x->shape[0], c = x->shape[1];
  const int levels = level_embed->shape[0];
  if (level_embed->shape[1] != c) throw_shape_mismatch("add_level_embedding", x->shape, level_embed->shape);
  if (static_cast<int>(offsets.size()) != levels + 1 || offsets.front() != 0 || offsets.back() != n) {
    throw std::invalid_argument("add_level_embedding: offsets do not partition the rows");
  }
  auto out = detail::op_node<T>("add_level_embedding", x->shape, {x, level_embed});
  for (int l = 0; l < levels; ++l) {
    const T* erow = level_embed->value.data() + static_cast<std::size_t>(l) * c;
    for (int r = offsets[l]; r < offsets[l + 1]; ++r) {
      const T* xrow = x->value.data() + static_cast<std::size_t>(r) * c;
      T* orow = out->value.data() + static_cast<std::size_t>(r) * c;
      for (int j = 0; j < c; ++j) orow[j] = xrow[j] + erow[j];
    }
  }
  if (out->requires_grad) {
    auto* px = x.get();
    auto* pe = level_embed.get();
    out->backward_fn = [px, pe, offsets, levels, c](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      if (px->requires_grad) {
        auto& gx = g.of(px);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (pe->requires_grad) {
        auto& ge = g.of(pe);
        for (int l = 0; l < levels; ++l) {
          T* gerow = ge.data() + static_cast<std::size_t>(l) * c;
          for (int r = offsets[l]; r < offsets[l + 1]; ++r) {
            const T* gorow = go.data() + static_cast<std::size_t>(r) * c;
            for (int j = 0; j < c; ++j) gerow[j] += gorow[j];
          }
        }
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> bilinear_sample(const TensorPtr<T>& map, const TensorPtr<T>& loc) {
  if (map->shape.size() != 3) throw std::invalid_argument("bilinear_sample: map must be H×W×C, got " + shape_to_string(map->shape));
  if (loc->shape.size() != 1 || loc->shape[0] != 2) throw std::invalid_argument("bilinear_sample: loc must have shape [2], got " + shape_to_string(loc->shape));
  const int h = map->shape[0], w = map->shape[1], c = map->shape[2];
  auto out = detail::op_node<T>("bilinear_sample", {c}, {map, loc});

  const T gx = loc->value[0] * static_cast<T>(w) - T(0.5);
  const T gy = loc->value[1] * static_cast<T>(h) - T(0.5);
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const T fx = gx - static_cast<T>(x0);
  const T fy = gy - static_cast<T>(y0);
  const T wx[2] = {T(1) - fx, fx};
  const T wy[2] = {T(1) - fy, fy};
  for (int dy = 0; dy < 2; ++dy) {
    const int yy = y0 + dy;
    if (yy < 0 || yy >= h) continue;
    for (int dx = 0; dx < 2; ++dx) {
      const int xx = x0 + dx;
      if (xx < 0 || xx >= w) continue;
      const T wgt = wy[dy] * wx[dx];
      const T* row = map->value.data() + (static_cast<std::size_t>(yy) * w + xx) * c;
      for (int j = 0; j < c; ++j) out->value[j] += wgt * row[j];
    }
  }
  if (out->requires_grad) {
    auto* pm = map.get();
    auto* pl = loc.get();
    out->backward_fn = [pm, pl, h, w, c, x0, y0, fx, fy](const TensorNode<T>* self, Gradients<T>& g) {
      const auto& go = g.of(self);
      const T wx[2] = {T(1) - fx, fx};
      const T wy[2] = {T(1) - fy, fy};
      auto corner = [&](int dy, int dx, int j) -> T {  // zero outside the map
        const int yy = y0 + dy, xx = x0 + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return T(0);
        return pm->value[(static_cast<std::size_t>(yy) * w + xx) * c + j];
      };
      if (pm->requires_grad) {
        auto& gm = g.of(pm);
        for (int dy = 0; dy < 2; ++dy) {
          const int yy = y0 + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = 0; dx < 2; ++dx) {
            const int xx = x0 + dx;
            if (xx < 0 || xx >= w) continue;
            const T wgt = wy[dy] * wx[dx];
            T* row = gm.data() + (static_cast<std::size_t>(yy) * w + xx) * c;
            for (int j = 0; j < c; ++j) row[j] += wgt * go[j];
          }
        }
      }
      if (pl->requires_grad) {
        auto& gl = g.of(pl);
        T dgx = 0, dgy = 0;
        for (int j = 0; j < c; ++j) {
          const T v00 = corner(0, 0, j), v01 = corner(0, 1, j);
          const T v10 = corner(1, 0, j), v11 = corner(1, 1, j);
          dgx += go[j] * (wy[0] * (v01 - v00) + wy[1] * (v11 - v10));
          dgy += go[j] * (wx[0] * (v10 - v00) + wx[1] * (v11 - v01));
        }
        gl[0] += dgx * static_cast<T>(w);
        gl[1] += dgy * static_cast<T>(h);
      }
    };
  }
  return detail::finish(out);
}

template <typename T>
TensorPtr<T> refine_coords(const TensorPtr<T>& y, const TensorPtr<T>& delta, double eps) {
  if (!shapes_equal(y->shape, delta->shape)) throw_shape_mismatch("refine_coords", y->shape, delta->shape);
  auto out = detail::op_node<T>("refine_coords", y->shape, {y, delta});
  const T lo = static_cast<T>(eps), hi = static_cast<T>(1.0 - eps);
  const std::int64_t n = out->size();
  std::vector<T> clamped(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const T yc = std::min(std::max(y->value[i], lo), hi);
    clamped[i] = yc;
    const T z = std::log(yc / (T(1) - yc)) + delta->value[i];
    // the output clamp keeps saturated sigmoids strictly inside (0,1)
    out->value[i] = std::min(std::max(T(1) / (T(1) + std::exp(-z)), lo), hi);
  }
  if (out->requires_grad) {
    auto* py = y.get();
    auto* pd = delta.get();
    out->backward_fn = [py, pd, lo, hi, clamped = std::move(clamped)](const TensorNode<T>* self,
                                                                      Gradients<T>& g) {
      const auto& go = g.of(self);
      std::vector<T>* gy = py->requires_grad ? &g.of(py) : nullptr;
      std::vector<T>* gd = pd->requires_grad ? &g.of(pd) : nullptr;
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T s = self->value[i];
        const T dz = go[i] * s * (T(1) - s);
        if (gd) (*gd)[i] += dz;
        if (gy) {
          const T yv = py->value[i];
          if (yv >= lo && yv <= hi) {
            const T yc = clamped[i];
            (*gy)[i] += dz / (yc * (T(1) - yc));
          }
        }
      }
    };
  }
  return detail::finish(out);
}

#define TFPOSE_INSTANTIATE_OPS(T)                                                                  \
  template TensorPtr<T> add<T>(const TensorPtr<T>&, const TensorPtr<T>&);                          \
  template TensorPtr<T> sub<T>(const TensorPtr<T>&, const TensorPtr<T>&);                          \
  template TensorPtr<T> mul<T>(const TensorPtr<T>&, const TensorPtr<T>&);                          \
  template TensorPtr<T> scale<T>(const TensorPtr<T>&, double);                                     \
  template TensorPtr<T> relu<T>(const TensorPtr<T>&);                                              \
  template TensorPtr<T> sigmoid<T>(const TensorPtr<T>&);                                           \
  template TensorPtr<T> absolute<T>(const TensorPtr<T>&);                                          \
  template TensorPtr<T> clamp<T>(const TensorPtr<T>&, double, double);                             \
  template TensorPtr<T> dropout<T>(const TensorPtr<T>&, double, std::mt19937_64&);                 \
  template TensorPtr<T> reshape<T>(const TensorPtr<T>&, Shape);                                    \
  template TensorPtr<T> transpose2d<T>(const TensorPtr<T>&);                                       \
  template TensorPtr<T> concat_rows<T>(const std::vector<TensorPtr<T>>&);                          \
  template TensorPtr<T> concat_cols<T>(const std::vector<TensorPtr<T>>&);                          \
  template TensorPtr<T> slice_rows<T>(const TensorPtr<T>&, int, int);                              \
  template TensorPtr<T> slice_cols<T>(const TensorPtr<T>&, int, int);                              \
  template TensorPtr<T> matmul<T>(const TensorPtr<T>&, const TensorPtr<T>&);                       \
  template TensorPtr<T> add_row_vector<T>(const TensorPtr<T>&, const TensorPtr<T>&);               \
  template TensorPtr<T> layer_norm<T>(const TensorPtr<T>&, const TensorPtr<T>&,                    \
                                      const TensorPtr<T>&, double);                                \
  template TensorPtr<T> softmax<T>(const TensorPtr<T>&, int);                                      \
  template TensorPtr<T> conv2d<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&,   \
                                  int, int);                                                       \
  template TensorPtr<T> conv_transpose2d<T>(const TensorPtr<T>&, const TensorPtr<T>&,              \
                                            const TensorPtr<T>&, int, int);                        \
  template TensorPtr<T> sum_all<T>(const TensorPtr<T>&);                                           \
  template TensorPtr<T> mean_all<T>(const TensorPtr<T>&);                                          \
  template TensorPtr<T> weighted_sum<T>(const TensorPtr<T>&, const std::vector<T>&);               \
  template TensorPtr<T> add_level_embedding<T>(const TensorPtr<T>&, const TensorPtr<T>&,           \
                                               const std::vector<int>&);                           \
  template TensorPtr<T> bilinear_sample<T>(const TensorPtr<T>&, const TensorPtr<T>&);              \
  template TensorPtr<T> refine_coords<T>(const TensorPtr<T>&, const TensorPtr<T>&, double);

TFPOSE_INSTANTIATE_OPS(float)
TFPOSE_INSTANTIATE_OPS(double)

#undef TFPOSE_INSTANTIATE_OPS

}  // namespace tfpose

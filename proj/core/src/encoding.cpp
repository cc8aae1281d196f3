#include "tfpose/encoding.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tfpose/ops.hpp"

namespace tfpose {

template <typename T>
FlattenedMemory<T> flatten_concat(const FeaturePyramid<T>& pyr) {
  if (pyr.levels.empty()) throw std::invalid_argument("flatten_concat: empty pyramid");
  const int c = pyr.levels[0].map->shape[2];
  FlattenedMemory<T> mem;
  mem.level_offsets.push_back(0);
  std::vector<TensorPtr<T>> parts;
  for (const auto& lvl : pyr.levels) {
    if (lvl.map->shape[2] != c) {
      throw_shape_mismatch("flatten_concat", pyr.levels[0].map->shape, lvl.map->shape);
    }
    const int h = lvl.map->shape[0], w = lvl.map->shape[1];
    mem.level_shapes.emplace_back(h, w);
    mem.level_offsets.push_back(mem.level_offsets.back() + h * w);
    parts.push_back(reshape(lvl.map, {h * w, c}));
  }
  mem.features = concat_rows(parts);
  mem.n = mem.level_offsets.back();
  return mem;
}

template <typename T>
TensorPtr<T> unflatten_level(const FlattenedMemory<T>& mem, int level) {
  if (level < 0 || level >= mem.levels()) throw std::invalid_argument("unflatten_level: bad level index");
  const auto [h, w] = mem.level_shapes[level];
  const int c = mem.features->shape[1];
  auto rows = slice_rows(mem.features, mem.level_offsets[level], mem.level_offsets[level + 1]);
  return reshape(rows, {h, w, c});
}

std::vector<double> pos_embed_row(double u, double v, int c) {
  if (c % 4 != 0) {
    throw std::invalid_argument("pos_embed_row: channel width must be divisible by 4, got " +
                                std::to_string(c));
  }
  constexpr double kTemperature = 10000.0;
  const int pairs_per_axis = c / 4;
  std::vector<double> row(static_cast<std::size_t>(c));
  const double scale = 2.0 * std::numbers::pi;
  for (int axis = 0; axis < 2; ++axis) {
    const double pos = (axis == 0 ? u : v) * scale;
    double* dst = row.data() + axis * (c / 2);
    for (int j = 0; j < pairs_per_axis; ++j) {
      const double inv_div = 1.0 / std::pow(kTemperature, (2.0 * j) / (c / 2.0));
      dst[2 * j] = std::sin(pos * inv_div);
      dst[2 * j + 1] = std::cos(pos * inv_div);
    }
  }
  return row;
}

template <typename T>
TensorPtr<T> pixel_pos_embedding(const std::vector<std::pair<int, int>>& level_shapes, int c) {
  if (c % 4 != 0) {
    throw std::invalid_argument("pixel_pos_embedding: channel width must be divisible by 4, got " +
                                std::to_string(c));
  }
  constexpr double kTemperature = 10000.0;
  const int pairs = c / 4;
  std::vector<double> inv_div(static_cast<std::size_t>(pairs));
  for (int j = 0; j < pairs; ++j) inv_div[j] = 1.0 / std::pow(kTemperature, (2.0 * j) / (c / 2.0));

  int n = 0;
  for (const auto& [h, w] : level_shapes) n += h * w;
  auto out = make_tensor<T>({n, c});
  const double scale = 2.0 * std::numbers::pi;
  std::size_t at = 0;
  for (const auto& [h, w] : level_shapes) {
    for (int y = 0; y < h; ++y) {
      const double v = (y + 0.5) / h * scale;
      for (int x = 0; x < w; ++x) {
        const double u = (x + 0.5) / w * scale;
        T* row = out->value.data() + at;
        for (int j = 0; j < pairs; ++j) {
          row[2 * j] = static_cast<T>(std::sin(u * inv_div[j]));
          row[2 * j + 1] = static_cast<T>(std::cos(u * inv_div[j]));
          row[c / 2 + 2 * j] = static_cast<T>(std::sin(v * inv_div[j]));
          row[c / 2 + 2 * j + 1] = static_cast<T>(std::cos(v * inv_div[j]));
        }
        at += c;
      }
    }
  }
  return out;
}

template <typename T>
TensorPtr<T> add_positional(const FlattenedMemory<T>& mem, const PositionalEmbedding<T>& pe) {
  if (!shapes_equal(mem.features->shape, pe.pixel->shape)) {
    throw_shape_mismatch("add_positional", mem.features->shape, pe.pixel->shape);
  }
  if (pe.level->shape[0] != mem.levels()) {
    throw_shape_mismatch("add_positional", pe.level->shape, {mem.levels(), mem.features->shape[1]});
  }
  auto with_level = add_level_embedding(mem.features, pe.level, mem.level_offsets);
  return add(with_level, pe.pixel);
}

template FlattenedMemory<float> flatten_concat<float>(const FeaturePyramid<float>&);
template FlattenedMemory<double> flatten_concat<double>(const FeaturePyramid<double>&);
template TensorPtr<float> unflatten_level<float>(const FlattenedMemory<float>&, int);
template TensorPtr<double> unflatten_level<double>(const FlattenedMemory<double>&, int);
template TensorPtr<float> pixel_pos_embedding<float>(const std::vector<std::pair<int, int>>&, int);
template TensorPtr<double> pixel_pos_embedding<double>(const std::vector<std::pair<int, int>>&, int);
template TensorPtr<float> add_positional<float>(const FlattenedMemory<float>&, const PositionalEmbedding<float>&);
template TensorPtr<double> add_positional<double>(const FlattenedMemory<double>&, const PositionalEmbedding<double>&);

}  // namespace tfpose

#include "tfpose/render.hpp"

#include <algorithm>
#include <cmath>

namespace tfpose {

namespace {

inline void blend(float* px, const std::array<float, 3>& color, double alpha) {
  const float a = static_cast<float>(alpha);
  for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.f - a) + color[static_cast<std::size_t>(c)] * a;
}

}  // namespace

void draw_disc(std::vector<float>& img, int h, int w, double cx, double cy, double radius,
               const std::array<float, 3>& color) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double alpha = std::clamp(radius - dist + 0.5, 0.0, 1.0);
      if (alpha > 0) blend(img.data() + (static_cast<std::size_t>(y) * w + x) * 3, color, alpha);
    }
  }
}

void draw_line(std::vector<float>& img, int h, int w, double x0, double y0, double x1, double y1,
               double thickness, const std::array<float, 3>& color) {
  const double half = thickness / 2.0;
  const int ymin = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - half - 1)));
  const int ymax = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + half + 1)));
  const int xmin = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - half - 1)));
  const int xmax = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + half + 1)));
  const double vx = x1 - x0, vy = y1 - y0;
  const double len2 = vx * vx + vy * vy;
  for (int y = ymin; y <= ymax; ++y) {
    for (int x = xmin; x <= xmax; ++x) {
      const double px = (x + 0.5) - x0;
      const double py = (y + 0.5) - y0;
      double t = len2 > 0 ? (px * vx + py * vy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double dx = px - t * vx, dy = py - t * vy;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double alpha = std::clamp(half - dist + 0.5, 0.0, 1.0);
      if (alpha > 0) blend(img.data() + (static_cast<std::size_t>(y) * w + x) * 3, color, alpha);
    }
  }
}

std::array<float, 3> sample_image(const std::vector<float>& img, int h, int w, double px, double py) {
  const double gx = px - 0.5, gy = py - 0.5;
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const double fx = gx - x0, fy = gy - y0;
  std::array<float, 3> out{0.f, 0.f, 0.f};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int dy = 0; dy < 2; ++dy) {
    const int yy = y0 + dy;
    if (yy < 0 || yy >= h) continue;
    for (int dx = 0; dx < 2; ++dx) {
      const int xx = x0 + dx;
      if (xx < 0 || xx >= w) continue;
      const float wgt = static_cast<float>(wy[dy] * wx[dx]);
      const float* src = img.data() + (static_cast<std::size_t>(yy) * w + xx) * 3;
      for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] += wgt * src[c];
    }
  }
  return out;
}

std::vector<float> warp_affine(const std::vector<float>& img, int h, int w,
                               const std::array<double, 6>& inv, int out_h, int out_w) {
  std::vector<float> out(static_cast<std::size_t>(out_h) * out_w * 3, 0.f);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double qx = x + 0.5, qy = y + 0.5;
      const double sx = inv[0] * qx + inv[1] * qy + inv[2];
      const double sy = inv[3] * qx + inv[4] * qy + inv[5];
      const auto px = sample_image(img, h, w, sx, sy);
      float* dst = out.data() + (static_cast<std::size_t>(y) * out_w + x) * 3;
      dst[0] = px[0];
      dst[1] = px[1];
      dst[2] = px[2];
    }
  }
  return out;
}

std::array<float, 3> palette_color(int index) {
  const double hue = std::fmod(0.61803398874989485 * (index + 1), 1.0) * 6.0;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double v = 1.0, p = 0.15, q = v - (v - p) * f, t = p + (v - p) * f;
  double r, gc, b;
  switch (sector) {
    case 0: r = v; gc = t; b = p; break;
    case 1: r = q; gc = v; b = p; break;
    case 2: r = p; gc = v; b = t; break;
    case 3: r = p; gc = q; b = v; break;
    case 4: r = t; gc = p; b = v; break;
    default: r = v; gc = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(gc), static_cast<float>(b)};
}

}  // namespace tfpose

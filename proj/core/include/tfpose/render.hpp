#pragma once

#include <array>
#include <vector>

namespace tfpose {

/// Anti-aliased raster helpers on h×w×3 float images (values in [0,1]).
/// Coordinates are continuous pixel positions; pixel (ix, iy) has its center
/// at (ix+0.5, iy+0.5).

void draw_disc(std::vector<float>& img, int h, int w, double cx, double cy, double radius,
               const std::array<float, 3>& color);

void draw_line(std::vector<float>& img, int h, int w, double x0, double y0, double x1, double y1,
               double thickness, const std::array<float, 3>& color);

/// Bilinear sample with zero padding at a continuous position.
std::array<float, 3> sample_image(const std::vector<float>& img, int h, int w, double px, double py);

/// out(q) = in(inv(q)) for the affine map inv = [a b tx; c d ty] applied to
/// output pixel centers; zero fill outside the source.
std::vector<float> warp_affine(const std::vector<float>& img, int h, int w,
                               const std::array<double, 6>& inv, int out_h, int out_w);

/// Distinct per-index color (golden-ratio hue walk).
std::array<float, 3> palette_color(int index);

}  // namespace tfpose

#pragma once

#include <string>
#include <vector>

namespace tfpose {

/// 8-bit RGB PNG from an h×w×3 float image (values clamped to [0,1]).
void write_png(const std::string& path, const std::vector<float>& pixels, int h, int w);

}  // namespace tfpose

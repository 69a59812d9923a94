#pragma once

#include <cstddef>

#include "edgefool/tensor.hpp"

namespace edgefool {

// RGB raster stored planar as a (3, H, W) tensor with values in [0, 1].
using Image = Tensor;

inline Image make_image(std::size_t height, std::size_t width, double fill = 0.0) {
  return Image({3, height, width}, fill);
}

inline std::size_t image_height(const Image& img) { return img.dim(1); }
inline std::size_t image_width(const Image& img) { return img.dim(2); }

// Throws ShapeError unless `img` is (3, H, W) with H, W >= 1.
void require_image(const Image& img, const char* what);

Image clamp_unit(Image img);

// Mean over all pixels and channels of |a - b|.
double mean_abs_diff(const Image& a, const Image& b);

}  // namespace edgefool

#pragma once

#include <array>
#include <cstddef>

#include "edgefool/image.hpp"

namespace edgefool {

/// CIE Lab raster, planar (3, H, W) with channels L, a, b.
///
/// Conversions use sRGB (IEC 61966-2-1) transfer curves, the sRGB primaries
/// to XYZ matrix and the D65 white point (2 degree observer). The white point
/// is taken as the row sums of the RGB->XYZ matrix so that RGB (1,1,1) maps to
/// exactly L=100, a=b=0.
struct LabImage {
  Tensor channels;

  std::size_t height() const { return channels.dim(1); }
  std::size_t width() const { return channels.dim(2); }
  double L(std::size_t y, std::size_t x) const { return channels.at(0, y, x); }
  double a(std::size_t y, std::size_t x) const { return channels.at(1, y, x); }
  double b(std::size_t y, std::size_t x) const { return channels.at(2, y, x); }
};

using Triple = std::array<double, 3>;

// Per-pixel conversions. Inputs outside [0,1] are clamped by rgb_to_lab.
Triple rgb_to_lab(const Triple& rgb);
// Inverse chain without the final clamp (may leave [0,1] for out-of-gamut Lab).
Triple lab_to_rgb_unclamped(const Triple& lab);

struct ColorWarnings {
  std::size_t clamped_values = 0;
};

LabImage rgb_to_lab(const Image& img, ColorWarnings* warnings = nullptr);

// Output clamped to [0,1]. `pre_clamp`, when given, receives the unclamped RGB.
Image lab_to_rgb(const LabImage& lab, Image* pre_clamp = nullptr);

// Jacobian-transpose products. Gradients are zero for inputs that rgb_to_lab
// clamped and for outputs that lab_to_rgb clamped.
Image rgb_to_lab_backward(const Tensor& grad_lab, const Image& saved_rgb);
Tensor lab_to_rgb_backward(const Image& grad_rgb, const LabImage& saved_lab);

}  // namespace edgefool

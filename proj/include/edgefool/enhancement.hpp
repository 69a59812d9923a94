#pragma once

#include "edgefool/color.hpp"
#include "edgefool/image.hpp"

namespace edgefool {

/// Sigmoid detail-enhancement parameters, all in L-channel units.
struct EnhancementParams {
  double v1 = 56.0;  // midpoint of the structure curve
  double v2 = 1.0;   // structure slope
  double v3 = 15.0;  // detail slope

  void validate() const;
};

// f(a, b) = 1 / (1 + exp(-a b)) - 0.5, evaluated as tanh(a b / 2) / 2.
double sigmoid_remap(double a, double b);
// df/da = b * (1/4 - f^2)
double sigmoid_remap_slope(double a, double b);
Tensor sigmoid_remap(const Tensor& a, double b);

/// Enhanced L = (f((Ls - v1)/100, v2) * 100 + v1) + f(Ld/100, v3) * 100.
Tensor enhance_L(const Tensor& structure_L, const Tensor& detail_L, const EnhancementParams& p);

struct EnhanceLGrads {
  Tensor structure_L;
  Tensor detail_L;
};

// Partial derivatives holding the other input fixed.
EnhanceLGrads enhance_L_backward(const Tensor& grad_out, const Tensor& structure_L, const Tensor& detail_L,
                                 const EnhancementParams& p);

/// Saved state of compose_adversarial for the backward pass.
struct Composition {
  Image adversarial;         // final clamped RGB
  Image pre_clamp;           // RGB before the [0,1] clamp
  LabImage enhanced_lab;     // (enhanced L, original a, original b)
  Image structure;           // FCNN output as given
  Tensor structure_L;
  Tensor detail_L;
  double clamp_fraction = 0.0;  // pixels with any channel outside [0,1] before clamping
};

/// Splits the original's lightness into structure and detail using the
/// structure image, enhances the detail, keeps the original a/b channels and
/// converts back to RGB.
Composition compose_adversarial(const LabImage& original_lab, const Image& structure, const EnhancementParams& p);
Composition compose_adversarial(const Image& original, const Image& structure, const EnhancementParams& p);

// d(adversarial)/d(structure) applied to `grad_adversarial`.
Image compose_adversarial_backward(const Image& grad_adversarial, const Composition& saved,
                                   const EnhancementParams& p);

}  // namespace edgefool

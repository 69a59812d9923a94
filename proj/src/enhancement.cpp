#include "edgefool/enhancement.hpp"

#include <algorithm>
#include <cmath>

#include "edgefool/error.hpp"

namespace edgefool {

void EnhancementParams::validate() const {
  if (!(v2 > 0.0) || !(v3 > 0.0)) throw ConfigError("EnhancementParams: v2 and v3 must be > 0");
  if (!(v1 >= 0.0 && v1 <= 100.0)) throw ConfigError("EnhancementParams: v1 must lie in [0,100]");
}

double sigmoid_remap(double a, double b) { return 0.5 * std::tanh(0.5 * a * b); }

double sigmoid_remap_slope(double a, double b) {
  const double f = sigmoid_remap(a, b);
  return b * (0.25 - f * f);
}

Tensor sigmoid_remap(const Tensor& a, double b) {
  Tensor out = a;
  for (double& v : out.values()) v = sigmoid_remap(v, b);
  return out;
}

Tensor enhance_L(const Tensor& structure_L, const Tensor& detail_L, const EnhancementParams& p) {
  require_same_shape(structure_L, detail_L, "enhance_L");
  Tensor out(structure_L.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (sigmoid_remap((structure_L[i] - p.v1) / 100.0, p.v2) * 100.0 + p.v1) +
             sigmoid_remap(detail_L[i] / 100.0, p.v3) * 100.0;
  }
  return out;
}

EnhanceLGrads enhance_L_backward(const Tensor& grad_out, const Tensor& structure_L, const Tensor& detail_L,
                                 const EnhancementParams& p) {
  require_same_shape(structure_L, detail_L, "enhance_L_backward");
  require_same_shape(grad_out, structure_L, "enhance_L_backward");
  EnhanceLGrads g{Tensor(structure_L.shape()), Tensor(detail_L.shape())};
  // The 1/100 inside and the *100 outside cancel.
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    g.structure_L[i] = grad_out[i] * sigmoid_remap_slope((structure_L[i] - p.v1) / 100.0, p.v2);
    g.detail_L[i] = grad_out[i] * sigmoid_remap_slope(detail_L[i] / 100.0, p.v3);
  }
  return g;
}

Composition compose_adversarial(const LabImage& original_lab, const Image& structure, const EnhancementParams& p) {
  require_image(structure, "compose_adversarial");
  require_same_shape(original_lab.channels, structure, "compose_adversarial");
  const std::size_t n = structure.dim(1) * structure.dim(2);
  const Shape plane{structure.dim(1), structure.dim(2)};

  Composition out;
  out.structure = structure;
  const LabImage structure_lab = rgb_to_lab(structure);
  out.structure_L = Tensor(plane, {structure_lab.channels.data(), structure_lab.channels.data() + n});
  out.detail_L = Tensor(plane);
  for (std::size_t i = 0; i < n; ++i) out.detail_L[i] = original_lab.channels[i] - out.structure_L[i];

  const Tensor enhanced = enhance_L(out.structure_L, out.detail_L, p);
  out.enhanced_lab = original_lab;
  std::copy(enhanced.data(), enhanced.data() + n, out.enhanced_lab.channels.data());

  out.adversarial = lab_to_rgb(out.enhanced_lab, &out.pre_clamp);
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = out.pre_clamp[c * n + i];
      any = any || v < 0.0 || v > 1.0;
    }
    clamped += any;
  }
  out.clamp_fraction = static_cast<double>(clamped) / static_cast<double>(n);
  return out;
}

Composition compose_adversarial(const Image& original, const Image& structure, const EnhancementParams& p) {
  require_image(original, "compose_adversarial");
  return compose_adversarial(rgb_to_lab(original), structure, p);
}

Image compose_adversarial_backward(const Image& grad_adversarial, const Composition& saved,
                                   const EnhancementParams& p) {
  require_same_shape(grad_adversarial, saved.structure, "compose_adversarial_backward");
  const std::size_t n = saved.structure.dim(1) * saved.structure.dim(2);
  const Tensor grad_lab = lab_to_rgb_backward(grad_adversarial, saved.enhanced_lab);
  const Tensor grad_enhanced({saved.structure.dim(1), saved.structure.dim(2)},
                             {grad_lab.data(), grad_lab.data() + n});
  const EnhanceLGrads g = enhance_L_backward(grad_enhanced, saved.structure_L, saved.detail_L, p);

  // detail_L = L(original) - structure_L, so the detail path enters with a minus sign.
  Tensor grad_structure_lab(saved.structure.shape());
  for (std::size_t i = 0; i < n; ++i) grad_structure_lab[i] = g.structure_L[i] - g.detail_L[i];
  return rgb_to_lab_backward(grad_structure_lab, saved.structure);
}

}  // namespace edgefool

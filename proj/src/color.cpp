#include "edgefool/color.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "edgefool/error.hpp"

namespace edgefool {

namespace {

constexpr double kDelta = 6.0 / 29.0;
constexpr double kDelta2 = kDelta * kDelta;
constexpr double kDelta3 = kDelta2 * kDelta;
constexpr double kLinearOffset = 4.0 / 29.0;

struct Matrices {
  Eigen::Matrix3d rgb_to_t;  // diag(1/white) * M
  Eigen::Matrix3d t_to_rgb;  // M^-1 * diag(white)
};

const Matrices& matrices() {
  static const Matrices m = [] {
    Eigen::Matrix3d rgb_to_xyz;
    rgb_to_xyz << 0.4124564, 0.3575761, 0.1804375,
                  0.2126729, 0.7151522, 0.0721750,
                  0.0193339, 0.1191920, 0.9503041;
    const Eigen::Vector3d white = rgb_to_xyz.rowwise().sum();
    Matrices out;
    out.rgb_to_t = white.cwiseInverse().asDiagonal() * rgb_to_xyz;
    out.t_to_rgb = out.rgb_to_t.inverse();
    return out;
  }();
  return m;
}

double srgb_decode(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

double srgb_decode_slope(double c) {
  return c <= 0.04045 ? 1.0 / 12.92 : (2.4 / 1.055) * std::pow((c + 0.055) / 1.055, 1.4);
}

double srgb_encode(double l) { return l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055; }

double srgb_encode_slope(double l) {
  return l <= 0.0031308 ? 12.92 : (1.055 / 2.4) * std::pow(l, 1.0 / 2.4 - 1.0);
}

double lab_f(double t) { return t <= kDelta3 ? t / (3.0 * kDelta2) + kLinearOffset : std::cbrt(t); }

double lab_f_slope(double t) {
  if (t <= kDelta3) return 1.0 / (3.0 * kDelta2);
  const double c = std::cbrt(t);
  return 1.0 / (3.0 * c * c);
}

double lab_finv(double f) { return f <= kDelta ? 3.0 * kDelta2 * (f - kLinearOffset) : f * f * f; }

double lab_finv_slope(double f) { return f <= kDelta ? 3.0 * kDelta2 : 3.0 * f * f; }

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

void require_lab(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw ShapeError(std::string(what) + ": expected a (3,H,W) Lab tensor, got " + shape_string(t.shape()));
  }
}

}  // namespace

void require_image(const Image& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) == 0 || img.dim(2) == 0) {
    throw ShapeError(std::string(what) + ": expected a (3,H,W) image, got " + shape_string(img.shape()));
  }
}

Image clamp_unit(Image img) {
  for (double& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

double mean_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "mean_abs_diff");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return a.size() ? acc / static_cast<double>(a.size()) : 0.0;
}

Triple rgb_to_lab(const Triple& rgb) {
  const Matrices& m = matrices();
  const Eigen::Vector3d lin(srgb_decode(std::clamp(rgb[0], 0.0, 1.0)), srgb_decode(std::clamp(rgb[1], 0.0, 1.0)),
                            srgb_decode(std::clamp(rgb[2], 0.0, 1.0)));
  const Eigen::Vector3d t = m.rgb_to_t * lin;
  const double fx = lab_f(t[0]);
  const double fy = lab_f(t[1]);
  const double fz = lab_f(t[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

Triple lab_to_rgb_unclamped(const Triple& lab) {
  const Matrices& m = matrices();
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const Eigen::Vector3d t(lab_finv(fx), lab_finv(fy), lab_finv(fz));
  const Eigen::Vector3d lin = m.t_to_rgb * t;
  return {srgb_encode(lin[0]), srgb_encode(lin[1]), srgb_encode(lin[2])};
}

LabImage rgb_to_lab(const Image& img, ColorWarnings* warnings) {
  require_image(img, "rgb_to_lab");
  const std::size_t n = img.dim(1) * img.dim(2);
  LabImage lab{Tensor(img.shape())};
  const double* r = img.data();
  const double* g = r + n;
  const double* b = g + n;
  double* L = lab.channels.data();
  double* A = L + n;
  double* B = A + n;
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    clamped += !in_unit(r[i]) + !in_unit(g[i]) + !in_unit(b[i]);
    const Triple out = rgb_to_lab(Triple{r[i], g[i], b[i]});
    L[i] = out[0];
    A[i] = out[1];
    B[i] = out[2];
  }
  if (warnings) warnings->clamped_values += clamped;
  return lab;
}

Image lab_to_rgb(const LabImage& lab, Image* pre_clamp) {
  require_lab(lab.channels, "lab_to_rgb");
  const std::size_t n = lab.channels.dim(1) * lab.channels.dim(2);
  Image rgb(lab.channels.shape());
  if (pre_clamp) *pre_clamp = Image(lab.channels.shape());
  const double* L = lab.channels.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Triple out = lab_to_rgb_unclamped(Triple{L[i], L[n + i], L[2 * n + i]});
    for (std::size_t c = 0; c < 3; ++c) {
      rgb[c * n + i] = std::clamp(out[c], 0.0, 1.0);
      if (pre_clamp) (*pre_clamp)[c * n + i] = out[c];
    }
  }
  return rgb;
}

Image rgb_to_lab_backward(const Tensor& grad_lab, const Image& saved_rgb) {
  require_image(saved_rgb, "rgb_to_lab_backward");
  require_same_shape(grad_lab, saved_rgb, "rgb_to_lab_backward");
  const Matrices& m = matrices();
  const std::size_t n = saved_rgb.dim(1) * saved_rgb.dim(2);
  Image grad(saved_rgb.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double gL = grad_lab[i];
    const double ga = grad_lab[n + i];
    const double gb = grad_lab[2 * n + i];
    if (gL == 0.0 && ga == 0.0 && gb == 0.0) continue;
    Eigen::Vector3d c;
    Eigen::Vector3d lin;
    for (std::size_t k = 0; k < 3; ++k) {
      c[k] = std::clamp(saved_rgb[k * n + i], 0.0, 1.0);
      lin[k] = srgb_decode(c[k]);
    }
    const Eigen::Vector3d t = m.rgb_to_t * lin;
    const Eigen::Vector3d gf(500.0 * ga, 116.0 * gL - 500.0 * ga + 200.0 * gb, -200.0 * gb);
    const Eigen::Vector3d gt(gf[0] * lab_f_slope(t[0]), gf[1] * lab_f_slope(t[1]), gf[2] * lab_f_slope(t[2]));
    const Eigen::Vector3d glin = m.rgb_to_t.transpose() * gt;
    for (std::size_t k = 0; k < 3; ++k) {
      const double raw = saved_rgb[k * n + i];
      grad[k * n + i] = in_unit(raw) ? glin[k] * srgb_decode_slope(c[k]) : 0.0;
    }
  }
  return grad;
}

Tensor lab_to_rgb_backward(const Image& grad_rgb, const LabImage& saved_lab) {
  require_lab(saved_lab.channels, "lab_to_rgb_backward");
  require_same_shape(grad_rgb, saved_lab.channels, "lab_to_rgb_backward");
  const Matrices& m = matrices();
  const std::size_t n = saved_lab.channels.dim(1) * saved_lab.channels.dim(2);
  const double* L = saved_lab.channels.data();
  Tensor grad(saved_lab.channels.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double fy = (L[i] + 16.0) / 116.0;
    const double fx = fy + L[n + i] / 500.0;
    const double fz = fy - L[2 * n + i] / 200.0;
    const Eigen::Vector3d t(lab_finv(fx), lab_finv(fy), lab_finv(fz));
    const Eigen::Vector3d lin = m.t_to_rgb * t;
    Eigen::Vector3d glin;
    for (std::size_t k = 0; k < 3; ++k) {
      const double out = srgb_encode(lin[k]);
      glin[k] = in_unit(out) ? grad_rgb[k * n + i] * srgb_encode_slope(lin[k]) : 0.0;
    }
    const Eigen::Vector3d gt = m.t_to_rgb.transpose() * glin;
    const double gfx = gt[0] * lab_finv_slope(fx);
    const double gfy = gt[1] * lab_finv_slope(fy);
    const double gfz = gt[2] * lab_finv_slope(fz);
    grad[i] = (gfx + gfy + gfz) / 116.0;
    grad[n + i] = gfx / 500.0;
    grad[2 * n + i] = -gfz / 200.0;
  }
  return grad;
}

}  // namespace edgefool

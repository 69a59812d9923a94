#include "edgefool/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "edgefool/error.hpp"

namespace edgefool {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw ShapeError(op + ": " + detail);
}

void require_rank3(const Tensor& t, const char* op, const char* name) {
  if (t.rank() != 3) {
    shape_fail(op, std::string(name) + " must be rank 3 (C,H,W), got " + shape_string(t.shape()));
  }
}

// Kernel taps that touch at least one in-bounds input pixel. Large dilations on
// small images leave most taps reading only zero padding.
struct TapPlan {
  std::vector<std::pair<std::size_t, std::size_t>> taps;
  bool all_active = true;
};

TapPlan plan_taps(const ConvSpec& spec, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo) {
  TapPlan plan;
  auto touches = [](std::size_t k, std::size_t d, std::size_t pad, std::size_t in, std::size_t out) {
    // offset = k*d - pad; some o in [0,out) with 0 <= o + offset < in
    const auto offset = static_cast<std::ptrdiff_t>(k * d) - static_cast<std::ptrdiff_t>(pad);
    const auto lo = offset;
    const auto hi = static_cast<std::ptrdiff_t>(out) - 1 + offset;
    return hi >= 0 && lo < static_cast<std::ptrdiff_t>(in);
  };
  for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
    for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
      if (touches(ky, spec.dilation, spec.pad_h, h, ho) &&
          touches(kx, spec.dilation, spec.pad_w, w, wo)) {
        plan.taps.emplace_back(ky, kx);
      } else {
        plan.all_active = false;
      }
    }
  }
  return plan;
}

// Valid output range [begin, end) along one axis for a tap offset.
std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t offset, std::size_t in, std::size_t out) {
  const std::ptrdiff_t begin = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t end =
      std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out), static_cast<std::ptrdiff_t>(in) - offset);
  if (end <= begin) return {0, 0};
  return {static_cast<std::size_t>(begin), static_cast<std::size_t>(end)};
}

RowMat im2col(const Tensor& input, const ConvSpec& spec, const TapPlan& plan, std::size_t ho,
              std::size_t wo) {
  const std::size_t h = input.dim(1);
  const std::size_t w = input.dim(2);
  const std::size_t ntaps = plan.taps.size();
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(spec.in_channels * ntaps),
                            static_cast<Eigen::Index>(ho * wo));
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    const double* src = input.data() + ci * h * w;
    for (std::size_t t = 0; t < ntaps; ++t) {
      const auto [ky, kx] = plan.taps[t];
      const auto oy_off = static_cast<std::ptrdiff_t>(ky * spec.dilation) - static_cast<std::ptrdiff_t>(spec.pad_h);
      const auto ox_off = static_cast<std::ptrdiff_t>(kx * spec.dilation) - static_cast<std::ptrdiff_t>(spec.pad_w);
      const auto [y0, y1] = valid_range(oy_off, h, ho);
      const auto [x0, x1] = valid_range(ox_off, w, wo);
      double* row = col.data() + (ci * ntaps + t) * ho * wo;
      for (std::size_t oy = y0; oy < y1; ++oy) {
        const double* s = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy) + oy_off) * w;
        double* d = row + oy * wo;
        for (std::size_t ox = x0; ox < x1; ++ox) {
          d[ox] = s[static_cast<std::ptrdiff_t>(ox) + ox_off];
        }
      }
    }
  }
  return col;
}

void col2im(const RowMat& col, const ConvSpec& spec, const TapPlan& plan, std::size_t ho, std::size_t wo,
            Tensor& grad_input) {
  const std::size_t h = grad_input.dim(1);
  const std::size_t w = grad_input.dim(2);
  const std::size_t ntaps = plan.taps.size();
  for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
    double* dst = grad_input.data() + ci * h * w;
    for (std::size_t t = 0; t < ntaps; ++t) {
      const auto [ky, kx] = plan.taps[t];
      const auto oy_off = static_cast<std::ptrdiff_t>(ky * spec.dilation) - static_cast<std::ptrdiff_t>(spec.pad_h);
      const auto ox_off = static_cast<std::ptrdiff_t>(kx * spec.dilation) - static_cast<std::ptrdiff_t>(spec.pad_w);
      const auto [y0, y1] = valid_range(oy_off, h, ho);
      const auto [x0, x1] = valid_range(ox_off, w, wo);
      const double* row = col.data() + (ci * ntaps + t) * ho * wo;
      for (std::size_t oy = y0; oy < y1; ++oy) {
        double* d = dst + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(oy) + oy_off) * w;
        const double* s = row + oy * wo;
        for (std::size_t ox = x0; ox < x1; ++ox) {
          d[static_cast<std::ptrdiff_t>(ox) + ox_off] += s[ox];
        }
      }
    }
  }
}

// Weight matrix restricted to the active taps: (out, in*ntaps).
RowMat gather_weights(const Tensor& weights, const ConvSpec& spec, const TapPlan& plan) {
  const std::size_t ntaps = plan.taps.size();
  RowMat wm(static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(spec.in_channels * ntaps));
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
      for (std::size_t t = 0; t < ntaps; ++t) {
        const auto [ky, kx] = plan.taps[t];
        wm(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci * ntaps + t)) =
            weights[((co * spec.in_channels + ci) * spec.kernel_h + ky) * spec.kernel_w + kx];
      }
    }
  }
  return wm;
}

void check_conv_args(const Tensor& input, const ConvSpec& spec, const Tensor& weights, const char* op) {
  require_rank3(input, op, "input");
  if (input.dim(0) != spec.in_channels) {
    shape_fail(op, "input channel dimension is " + std::to_string(input.dim(0)) + ", expected in_channels=" +
                       std::to_string(spec.in_channels));
  }
  if (spec.dilation < 1) shape_fail(op, "dilation must be >= 1");
  if (weights.shape() != spec.weight_shape()) {
    shape_fail(op, "weights shape " + shape_string(weights.shape()) + " does not match (out,in,kh,kw)=" +
                       shape_string(spec.weight_shape()));
  }
  if (spec.output_height(input.dim(1)) == 0 || spec.output_width(input.dim(2)) == 0) {
    shape_fail(op, "empty output for input " + shape_string(input.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("Tensor: shape " + shape_string(shape_) + " holds " + std::to_string(product(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "Tensor::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "Tensor::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return acc;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// ---------------------------------------------------------------------------

ConvSpec ConvSpec::same(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation) {
  if (kernel % 2 == 0) throw ConfigError("ConvSpec::same: kernel size must be odd");
  const std::size_t pad = dilation * (kernel - 1) / 2;
  return ConvSpec{in, out, kernel, kernel, dilation, pad, pad};
}

std::size_t ConvSpec::output_height(std::size_t h) const {
  const std::size_t span = dilation * (kernel_h - 1) + 1;
  return h + 2 * pad_h >= span ? h + 2 * pad_h - span + 1 : 0;
}

std::size_t ConvSpec::output_width(std::size_t w) const {
  const std::size_t span = dilation * (kernel_w - 1) + 1;
  return w + 2 * pad_w >= span ? w + 2 * pad_w - span + 1 : 0;
}

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights, const Tensor& bias) {
  check_conv_args(input, spec, weights, "conv2d_forward");
  if (!bias.empty() && bias.shape() != Shape{spec.out_channels}) {
    shape_fail("conv2d_forward", "bias shape " + shape_string(bias.shape()) + ", expected [" +
                                     std::to_string(spec.out_channels) + "]");
  }
  const std::size_t ho = spec.output_height(input.dim(1));
  const std::size_t wo = spec.output_width(input.dim(2));
  Tensor out({spec.out_channels, ho, wo});
  MapMat om(out.data(), static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(ho * wo));

  const TapPlan plan = plan_taps(spec, input.dim(1), input.dim(2), ho, wo);
  const bool pointwise = spec.kernel_h == 1 && spec.kernel_w == 1 && spec.pad_h == 0 && spec.pad_w == 0;
  if (pointwise) {
    ConstMapMat wm(weights.data(), static_cast<Eigen::Index>(spec.out_channels),
                   static_cast<Eigen::Index>(spec.in_channels));
    ConstMapMat xm(input.data(), static_cast<Eigen::Index>(spec.in_channels), static_cast<Eigen::Index>(ho * wo));
    om.noalias() = wm * xm;
  } else if (plan.taps.empty()) {
    om.setZero();
  } else {
    const RowMat col = im2col(input, spec, plan, ho, wo);
    if (plan.all_active) {
      ConstMapMat wm(weights.data(), static_cast<Eigen::Index>(spec.out_channels),
                     static_cast<Eigen::Index>(spec.fan_in()));
      om.noalias() = wm * col;
    } else {
      om.noalias() = gather_weights(weights, spec, plan) * col;
    }
  }
  if (!bias.empty()) {
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      om.row(static_cast<Eigen::Index>(co)).array() += bias[co];
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& saved_input, const ConvSpec& spec,
                          const Tensor& weights) {
  check_conv_args(saved_input, spec, weights, "conv2d_backward");
  const std::size_t ho = spec.output_height(saved_input.dim(1));
  const std::size_t wo = spec.output_width(saved_input.dim(2));
  if (grad_out.shape() != Shape{spec.out_channels, ho, wo}) {
    shape_fail("conv2d_backward", "grad_out shape " + shape_string(grad_out.shape()) + ", expected " +
                                      shape_string({spec.out_channels, ho, wo}));
  }
  ConvGrads g{Tensor::zeros_like(saved_input), Tensor(spec.weight_shape()), Tensor({spec.out_channels})};
  ConstMapMat gm(grad_out.data(), static_cast<Eigen::Index>(spec.out_channels), static_cast<Eigen::Index>(ho * wo));
  // Plain loop: vectorized reductions over maps change order with buffer alignment.
  const std::size_t plane = ho * wo;
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    const double* row = grad_out.data() + co * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += row[i];
    g.bias[co] = acc;
  }

  const bool pointwise = spec.kernel_h == 1 && spec.kernel_w == 1 && spec.pad_h == 0 && spec.pad_w == 0;
  if (pointwise) {
    ConstMapMat wm(weights.data(), static_cast<Eigen::Index>(spec.out_channels),
                   static_cast<Eigen::Index>(spec.in_channels));
    ConstMapMat xm(saved_input.data(), static_cast<Eigen::Index>(spec.in_channels),
                   static_cast<Eigen::Index>(ho * wo));
    MapMat gw(g.weights.data(), static_cast<Eigen::Index>(spec.out_channels),
              static_cast<Eigen::Index>(spec.in_channels));
    gw.noalias() = gm * xm.transpose();
    MapMat gx(g.input.data(), static_cast<Eigen::Index>(spec.in_channels), static_cast<Eigen::Index>(ho * wo));
    gx.noalias() = wm.transpose() * gm;
    return g;
  }

  const TapPlan plan = plan_taps(spec, saved_input.dim(1), saved_input.dim(2), ho, wo);
  if (plan.taps.empty()) return g;
  const RowMat col = im2col(saved_input, spec, plan, ho, wo);
  RowMat gcol;
  if (plan.all_active) {
    ConstMapMat wm(weights.data(), static_cast<Eigen::Index>(spec.out_channels),
                   static_cast<Eigen::Index>(spec.fan_in()));
    MapMat gw(g.weights.data(), static_cast<Eigen::Index>(spec.out_channels),
              static_cast<Eigen::Index>(spec.fan_in()));
    gw.noalias() = gm * col.transpose();
    gcol.noalias() = wm.transpose() * gm;
  } else {
    const RowMat wg = gather_weights(weights, spec, plan);
    const RowMat gw = gm * col.transpose();
    const std::size_t ntaps = plan.taps.size();
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
        for (std::size_t t = 0; t < ntaps; ++t) {
          const auto [ky, kx] = plan.taps[t];
          g.weights[((co * spec.in_channels + ci) * spec.kernel_h + ky) * spec.kernel_w + kx] =
              gw(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci * ntaps + t));
        }
      }
    }
    gcol.noalias() = wg.transpose() * gm;
  }
  col2im(gcol, spec, plan, ho, wo, g.input);
  return g;
}

// ---------------------------------------------------------------------------

Tensor leaky_relu_forward(const Tensor& x, double slope) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : slope * v;
  return y;
}

Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& saved_x, double slope) {
  require_same_shape(grad_out, saved_x, "leaky_relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(saved_x[i] > 0.0)) g[i] *= slope;
  }
  return g;
}

Tensor instance_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  require_rank3(x, "instance_norm_forward", "x");
  const std::size_t c = x.dim(0);
  const std::size_t n = x.dim(1) * x.dim(2);
  if (n < 2) shape_fail("instance_norm_forward", "H*W must be >= 2 for a defined variance");
  if (gain.shape() != Shape{c} || shift.shape() != Shape{c}) {
    shape_fail("instance_norm_forward", "gain/shift must have shape [" + std::to_string(c) + "]");
  }
  if (!(eps > 0.0)) throw ConfigError("instance_norm_forward: eps must be > 0");
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xs = x.data() + ch * n;
    double* ys = y.data() + ch * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += xs[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) ys[i] = gain[ch] * (xs[i] - mean) * inv_std + shift[ch];
  }
  return y;
}

InstanceNormGrads instance_norm_backward(const Tensor& grad_out, const Tensor& saved_x, const Tensor& gain,
                                         double eps) {
  require_rank3(saved_x, "instance_norm_backward", "saved_x");
  require_same_shape(grad_out, saved_x, "instance_norm_backward");
  const std::size_t c = saved_x.dim(0);
  const std::size_t n = saved_x.dim(1) * saved_x.dim(2);
  if (n < 2) shape_fail("instance_norm_backward", "H*W must be >= 2 for a defined variance");
  if (gain.shape() != Shape{c}) shape_fail("instance_norm_backward", "gain shape mismatch");
  InstanceNormGrads g{Tensor(saved_x.shape()), Tensor({c}), Tensor({c})};
  std::vector<double> xhat(n);
  const double nd = static_cast<double>(n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xs = saved_x.data() + ch * n;
    const double* gy = grad_out.data() + ch * n;
    double* gx = g.input.data() + ch * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += xs[i];
    mean /= nd;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= nd;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    double sum_g = 0.0;
    double sum_gxhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      xhat[i] = (xs[i] - mean) * inv_std;
      sum_g += gy[i];
      sum_gxhat += gy[i] * xhat[i];
    }
    g.gain[ch] = sum_gxhat;
    g.shift[ch] = sum_g;
    // dL/dx = gain*inv_std/N * (N*g - sum(g) - xhat*sum(g*xhat))
    const double k = gain[ch] * inv_std / nd;
    for (std::size_t i = 0; i < n; ++i) {
      gx[i] = k * (nd * gy[i] - sum_g - xhat[i] * sum_gxhat);
    }
  }
  return g;
}

Tensor avg_pool2_forward(const Tensor& x) {
  require_rank3(x, "avg_pool2_forward", "x");
  const std::size_t c = x.dim(0);
  const std::size_t ho = x.dim(1) / 2;
  const std::size_t wo = x.dim(2) / 2;
  if (ho == 0 || wo == 0) shape_fail("avg_pool2_forward", "input " + shape_string(x.shape()) + " too small");
  Tensor y({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        y.at(ch, oy, ox) = 0.25 * (x.at(ch, 2 * oy, 2 * ox) + x.at(ch, 2 * oy, 2 * ox + 1) +
                                   x.at(ch, 2 * oy + 1, 2 * ox) + x.at(ch, 2 * oy + 1, 2 * ox + 1));
      }
    }
  }
  return y;
}

Tensor avg_pool2_backward(const Tensor& grad_out, const Shape& input_shape) {
  if (input_shape.size() != 3 || grad_out.shape() != Shape{input_shape[0], input_shape[1] / 2, input_shape[2] / 2}) {
    shape_fail("avg_pool2_backward", "grad_out " + shape_string(grad_out.shape()) + " incompatible with input " +
                                         shape_string(input_shape));
  }
  Tensor g(input_shape);
  for (std::size_t ch = 0; ch < grad_out.dim(0); ++ch) {
    for (std::size_t oy = 0; oy < grad_out.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < grad_out.dim(2); ++ox) {
        const double v = 0.25 * grad_out.at(ch, oy, ox);
        g.at(ch, 2 * oy, 2 * ox) = v;
        g.at(ch, 2 * oy, 2 * ox + 1) = v;
        g.at(ch, 2 * oy + 1, 2 * ox) = v;
        g.at(ch, 2 * oy + 1, 2 * ox + 1) = v;
      }
    }
  }
  return g;
}

Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || weights.dim(1) != x.size()) {
    shape_fail("dense_forward", "weights " + shape_string(weights.shape()) + " incompatible with input of " +
                                    std::to_string(x.size()) + " values");
  }
  const std::size_t out = weights.dim(0);
  if (bias.shape() != Shape{out}) shape_fail("dense_forward", "bias shape mismatch");
  Tensor y({out});
  ConstMapMat wm(weights.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(x.size()));
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::Map<Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(out));
  yv.noalias() = wm * xv;
  for (std::size_t o = 0; o < out; ++o) y[o] += bias[o];
  return y;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& saved_x, const Tensor& weights) {
  if (weights.rank() != 2 || weights.dim(1) != saved_x.size() || grad_out.shape() != Shape{weights.dim(0)}) {
    shape_fail("dense_backward", "shape mismatch between grad_out, input and weights");
  }
  const std::size_t out = weights.dim(0);
  const std::size_t in = saved_x.size();
  DenseGrads g{Tensor(saved_x.shape()), Tensor(weights.shape()), grad_out};
  ConstMapMat wm(weights.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  Eigen::Map<const Eigen::VectorXd> gv(grad_out.data(), static_cast<Eigen::Index>(out));
  Eigen::Map<const Eigen::VectorXd> xv(saved_x.data(), static_cast<Eigen::Index>(in));
  Eigen::Map<Eigen::VectorXd>(g.input.data(), static_cast<Eigen::Index>(in)).noalias() = wm.transpose() * gv;
  MapMat(g.weights.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)).noalias() =
      gv * xv.transpose();
  return g;
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_params(const Tensor& params, const AdamConfig& config) {
  return AdamState{0, Tensor::zeros_like(params), Tensor::zeros_like(params), config};
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
  require_same_shape(params, grads, "adam_step");
  require_same_shape(params, state.first_moment, "adam_step (first moment)");
  require_same_shape(params, state.second_moment, "adam_step (second moment)");
  const AdamConfig& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  double* m = state.first_moment.data();
  double* v = state.second_moment.data();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    params[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

// ---------------------------------------------------------------------------

GradCheckReport finite_diff_check(const ScalarFn& f, const Tensor& x, const Tensor& analytic_grad,
                                  std::span<const std::size_t> coords, double h) {
  require_same_shape(x, analytic_grad, "finite_diff_check");
  GradCheckReport report;
  Tensor probe = x;
  for (const std::size_t i : coords) {
    if (i >= x.size()) throw ShapeError("finite_diff_check: coordinate out of range");
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grad[i];
    const double rounding = 4.0 * std::numeric_limits<double>::epsilon() * (std::abs(fp) + std::abs(fm)) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::max(0.0, std::abs(analytic - numeric) - rounding) / denom;
    if (report.checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic = analytic;
      report.numeric = numeric;
    }
    ++report.checked;
  }
  return report;
}

GradCheckReport finite_diff_check(const ScalarFn& f, const Tensor& x, const Tensor& analytic_grad, double h) {
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return finite_diff_check(f, x, analytic_grad, all, h);
}

}  // namespace edgefool

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace edgefool {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage: vectorized kernels then see the same alignment
// on every run, which keeps floating-point results bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 (C,H,W) element access.
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  void fill(double v);
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// ---------------------------------------------------------------------------
// Convolution

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t dilation = 1;
  std::size_t pad_h = 1;
  std::size_t pad_w = 1;

  // Zero padding of dilation*(k-1)/2 per side; output keeps the input size.
  static ConvSpec same(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation = 1);

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
  std::size_t output_height(std::size_t h) const;
  std::size_t output_width(std::size_t w) const;
};

// Dilated cross-correlation with zero padding. `bias` may be empty (no bias).
Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& saved_input, const ConvSpec& spec,
                          const Tensor& weights);

// ---------------------------------------------------------------------------
// Pointwise and normalization layers

inline constexpr double kDefaultLeakySlope = 0.2;

Tensor leaky_relu_forward(const Tensor& x, double slope = kDefaultLeakySlope);
// Derivative at exactly zero takes the slope branch.
Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& saved_x,
                           double slope = kDefaultLeakySlope);

inline constexpr double kDefaultNormEps = 1e-5;

// Per-channel standardization over H*W followed by a learnable affine map.
Tensor instance_norm_forward(const Tensor& x, const Tensor& gain, const Tensor& shift,
                             double eps = kDefaultNormEps);

struct InstanceNormGrads {
  Tensor input;
  Tensor gain;
  Tensor shift;
};

InstanceNormGrads instance_norm_backward(const Tensor& grad_out, const Tensor& saved_x,
                                         const Tensor& gain, double eps = kDefaultNormEps);

// 2x2 average pooling with stride 2 (odd trailing rows/columns are dropped).
Tensor avg_pool2_forward(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_out, const Shape& input_shape);

// y = W x + b with W of shape (out, in); x is flattened.
Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;  // same shape as the forward input
  Tensor weights;
  Tensor bias;
};

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& saved_x, const Tensor& weights);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::size_t step_count = 0;
  Tensor first_moment;
  Tensor second_moment;
  AdamConfig config;

  static AdamState for_params(const Tensor& params, const AdamConfig& config);
};

void adam_step(Tensor& params, const Tensor& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Finite-difference gradient check

using ScalarFn = std::function<double(const Tensor&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// max_i max(0, |g_i - fd_i| - r_i) / max(|g_i|, |fd_i|, 1e-8) over central
// differences of `f`, where r_i = 4 eps (|f(x+h)| + |f(x-h)|) / (2h) bounds the
// rounding noise of the difference quotient itself.
GradCheckReport finite_diff_check(const ScalarFn& f, const Tensor& x, const Tensor& analytic_grad,
                                  double h = 1e-5);

// Same, restricted to the listed coordinates.
GradCheckReport finite_diff_check(const ScalarFn& f, const Tensor& x, const Tensor& analytic_grad,
                                  std::span<const std::size_t> coords, double h = 1e-5);

}  // namespace edgefool

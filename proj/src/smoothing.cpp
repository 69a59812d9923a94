#include "edgefool/smoothing.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "edgefool/error.hpp"

namespace edgefool {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex, FftwFree>;

class Fft2d {
 public:
  Fft2d(std::size_t h, std::size_t w)
      : h_(h), w_(w), buf_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * h * w))) {
    if (!buf_) throw Error("l0_smooth: FFT buffer allocation failed");
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf_.get(), buf_.get(), FFTW_FORWARD,
                                FFTW_ESTIMATE);
    backward_ = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf_.get(), buf_.get(), FFTW_BACKWARD,
                                 FFTW_ESTIMATE);
  }
  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;
  ~Fft2d() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  // In-place on the internal buffer.
  void load_real(const double* src) {
    for (std::size_t i = 0; i < h_ * w_; ++i) {
      buf_.get()[i][0] = src[i];
      buf_.get()[i][1] = 0.0;
    }
  }
  void forward() { fftw_execute(forward_); }
  void backward() { fftw_execute(backward_); }
  fftw_complex* data() { return buf_.get(); }

 private:
  std::size_t h_;
  std::size_t w_;
  FftwBuffer buf_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

// Joint squared gradient per pixel with circular forward differences.
std::vector<double> joint_gradient_sq(const Image& img) {
  const std::size_t h = img.dim(1);
  const std::size_t w = img.dim(2);
  std::vector<double> sq(h * w, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t yn = (y + 1) % h;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t xn = (x + 1) % w;
        const double gx = img.at(c, y, xn) - img.at(c, y, x);
        const double gy = img.at(c, yn, x) - img.at(c, y, x);
        sq[y * w + x] += gx * gx + gy * gy;
      }
    }
  }
  return sq;
}

}  // namespace

void L0Config::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("L0Config: lambda must be > 0");
  if (!(kappa > 1.0)) throw ConfigError("L0Config: kappa must be > 1");
  const double b0 = initial_beta();
  if (!(b0 > 0.0) || !(beta_max > b0)) throw ConfigError("L0Config: require beta_max > beta0 > 0");
}

Image l0_smooth(const Image& img, const L0Config& cfg, const L0Observer& observer) {
  require_image(img, "l0_smooth");
  cfg.validate();
  const std::size_t h = img.dim(1);
  const std::size_t w = img.dim(2);
  const std::size_t n = h * w;

  // |F(dx)|^2 + |F(dy)|^2 for circular forward differences.
  std::vector<double> otf(n);
  for (std::size_t ky = 0; ky < h; ++ky) {
    const double sy = std::sin(std::numbers::pi * static_cast<double>(ky) / static_cast<double>(h));
    for (std::size_t kx = 0; kx < w; ++kx) {
      const double sx = std::sin(std::numbers::pi * static_cast<double>(kx) / static_cast<double>(w));
      otf[ky * w + kx] = 4.0 * (sx * sx + sy * sy);
    }
  }

  Fft2d fft(h, w);
  Image s = img;
  Tensor hgrad(img.shape());
  Tensor vgrad(img.shape());
  std::vector<double> rhs(n);
  const double inv_n = 1.0 / static_cast<double>(n);

  double beta = cfg.initial_beta();
  for (std::size_t iter = 0; beta <= cfg.beta_max; ++iter, beta *= cfg.kappa) {
    // (h, v) subproblem: keep the gradient only where it pays for its cost.
    const double threshold = cfg.lambda / beta;
    const std::vector<double> sq = joint_gradient_sq(s);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t yn = (y + 1) % h;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t xn = (x + 1) % w;
          const bool keep = sq[y * w + x] > threshold;
          hgrad.at(c, y, x) = keep ? s.at(c, y, xn) - s.at(c, y, x) : 0.0;
          vgrad.at(c, y, x) = keep ? s.at(c, yn, x) - s.at(c, y, x) : 0.0;
        }
      }
    }
    // S subproblem: (1 + beta D^T D) S = I + beta D^T (h, v), diagonal in Fourier space.
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t yp = (y + h - 1) % h;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t xp = (x + w - 1) % w;
          const double dtx = hgrad.at(c, y, xp) - hgrad.at(c, y, x);
          const double dty = vgrad.at(c, yp, x) - vgrad.at(c, y, x);
          rhs[y * w + x] = img.at(c, y, x) + beta * (dtx + dty);
        }
      }
      fft.load_real(rhs.data());
      fft.forward();
      fftw_complex* f = fft.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double denom = 1.0 + beta * otf[i];
        f[i][0] /= denom;
        f[i][1] /= denom;
      }
      fft.backward();
      double* dst = s.data() + c * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = f[i][0] * inv_n;
    }
    if (!s.all_finite()) {
      throw NumericError("l0_smooth: non-finite estimate", static_cast<std::ptrdiff_t>(iter));
    }
    if (observer) observer(iter, beta, s);
  }
  return clamp_unit(std::move(s));
}

std::size_t gradient_count(const Image& img, double threshold) {
  require_image(img, "gradient_count");
  const double t2 = threshold * threshold;
  const std::vector<double> sq = joint_gradient_sq(img);
  return static_cast<std::size_t>(std::count_if(sq.begin(), sq.end(), [t2](double v) { return v > t2; }));
}

double l0_energy(const Image& img, const Image& smoothed, double lambda) {
  require_image(img, "l0_energy");
  require_same_shape(img, smoothed, "l0_energy");
  double fidelity = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double d = smoothed[i] - img[i];
    fidelity += d * d;
  }
  return fidelity + lambda * static_cast<double>(gradient_count(smoothed));
}

}  // namespace edgefool

#pragma once

#include <cstddef>
#include <functional>

#include "edgefool/image.hpp"

namespace edgefool {

/// Parameters of L0 gradient-minimization smoothing.
struct L0Config {
  double lambda = 0.02;    // weight of the gradient-count penalty
  double kappa = 2.0;      // beta growth factor per outer iteration
  double beta_max = 1e5;   // stop once beta exceeds this
  double beta0 = 0.0;      // initial beta; 0 selects 2*lambda

  double initial_beta() const { return beta0 > 0.0 ? beta0 : 2.0 * lambda; }
  void validate() const;
};

// Called after each outer iteration with the current (unclamped) estimate.
using L0Observer = std::function<void(std::size_t iteration, double beta, const Image& estimate)>;

/// Structure-preserving smoothing by L0 gradient minimization.
///
/// Alternates hard thresholding of the auxiliary gradient field (one decision
/// per pixel, jointly over the three channels) with the exact solution of the
/// quadratic subproblem in the Fourier domain (circular boundaries). Gradients
/// are circular forward differences. The result is clamped to [0,1].
Image l0_smooth(const Image& img, const L0Config& cfg = {}, const L0Observer& observer = {});

// Number of pixels whose joint-channel circular forward gradient magnitude exceeds `threshold`.
std::size_t gradient_count(const Image& img, double threshold = 1e-9);

// sum (smoothed - img)^2 + lambda * gradient_count(smoothed)
double l0_energy(const Image& img, const Image& smoothed, double lambda);

}  // namespace edgefool

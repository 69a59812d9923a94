#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "edgefool/image.hpp"
#include "edgefool/packed_weights.hpp"
#include "edgefool/tensor.hpp"

namespace edgefool {

/// Dilated context-aggregation network mapping an RGB image to its structure
/// image. Every dilation except the last belongs to a 3x3 convolution followed
/// by instance normalization and a leaky ReLU; the last entry is the linear
/// 1x1 output convolution.
struct FcnnArchitecture {
  std::size_t in_channels = 3;
  std::size_t width = 24;
  std::size_t out_channels = 3;
  std::vector<std::size_t> dilations{1, 2, 4, 8, 16, 32, 1, 1};
  double slope = kDefaultLeakySlope;
  double norm_eps = kDefaultNormEps;

  std::size_t num_layers() const { return dilations.size(); }
  void validate() const;
};

struct FcnnLayer {
  ConvSpec spec;
  Tensor weights;
  Tensor bias;   // output layer only; normalized layers carry none
  Tensor gain;   // normalized layers only
  Tensor shift;  // normalized layers only
  bool normalized = true;
};

struct FcnnParams {
  FcnnArchitecture arch;
  std::vector<FcnnLayer> layers;
  std::uint64_t seed = 0;
  // Bumped on every parameter update; activation caches record it.
  std::uint64_t revision = 0;

  // Trainable tensors in a fixed order (weights, then bias or gain/shift per layer).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t parameter_count() const;
};

using FcnnGrads = std::vector<Tensor>;  // same order as FcnnParams::tensors()

// He-uniform weights (variance 2/fan_in), zero biases, unit gains, zero shifts.
FcnnParams fcnn_init(const FcnnArchitecture& arch, std::uint64_t seed);

struct FcnnCache {
  std::uint64_t revision = 0;
  const FcnnParams* params = nullptr;
  std::vector<Tensor> conv_inputs;  // input of each convolution
  std::vector<Tensor> conv_outputs;  // pre-normalization (normalized layers)
  std::vector<Tensor> norm_outputs;  // pre-activation (normalized layers)
};

// Requires H*W >= 2 (instance normalization needs a variance).
Image fcnn_forward(const Image& img, const FcnnParams& params, FcnnCache* cache = nullptr);

FcnnGrads fcnn_backward(const Image& grad_structure, const FcnnCache& cache, const FcnnParams& params);

// Snapshot in the packed-weights format (architecture and seed in the manifest).
PackedWeights fcnn_to_packed(const FcnnParams& params);
FcnnParams fcnn_from_packed(const PackedWeights& packed);
void save_fcnn(const std::string& path, const FcnnParams& params);
FcnnParams load_fcnn(const std::string& path);

}  // namespace edgefool

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "edgefool/classifier.hpp"

namespace edgefool {

/// Procedural "textured shapes" dataset: one shape family per class drawn
/// with random position, size, colors, background texture and noise, then
/// quantized to 8 bits.
struct SyntheticConfig {
  std::size_t num_classes = 10;
  std::size_t size = 32;
  std::size_t per_class = 100;
  std::uint64_t seed = 0;
};

const std::vector<std::string>& synthetic_class_names();

Image render_synthetic(std::size_t label, std::size_t size, std::uint64_t seed);

// Items ordered class-major; item i of class c uses seed mix(seed, c * per_class + i).
std::vector<LabeledImage> generate_synthetic(const SyntheticConfig& cfg);

}  // namespace edgefool

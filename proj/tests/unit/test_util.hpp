#pragma once

#include <cstdint>

#include "edgefool/image.hpp"
#include "edgefool/random.hpp"
#include "edgefool/tensor.hpp"

namespace edgefool::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Image random_image(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  return random_tensor({3, h, w}, seed, lo, hi);
}

}  // namespace edgefool::testing

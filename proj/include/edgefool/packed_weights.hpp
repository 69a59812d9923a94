#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "edgefool/tensor.hpp"

namespace edgefool {

/// Packed-weights file layout:
///
///   bytes 0..7   magic "DFWT0001"
///   bytes 8..15  manifest length N, unsigned 64-bit little-endian
///   next N bytes UTF-8 JSON manifest
///   remainder    tensor payload, IEEE-754 binary64 little-endian
///
/// The manifest carries caller metadata plus "format_version" and a
/// "tensors" table of {name, shape, offset}, offset in bytes from the start
/// of the payload. Tensors are stored back to back in table order.
inline constexpr std::string_view kPackedMagic = "DFWT0001";
inline constexpr int kPackedFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct PackedWeights {
  nlohmann::json metadata;  // manifest without the tensors table and version
  std::vector<NamedTensor> tensors;
};

std::string encode_packed(const PackedWeights& packed);
PackedWeights decode_packed(std::string_view bytes);

void write_packed(const std::string& path, const PackedWeights& packed);
PackedWeights read_packed(const std::string& path);

}  // namespace edgefool

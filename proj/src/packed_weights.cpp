#include "edgefool/packed_weights.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "edgefool/error.hpp"

namespace edgefool {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_packed(const PackedWeights& packed) {
  nlohmann::json manifest = packed.metadata;
  manifest["format_version"] = kPackedFormatVersion;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const NamedTensor& t : packed.tensors) {
    table.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += 8 * t.tensor.size();
  }
  manifest["tensors"] = std::move(table);
  const std::string text = manifest.dump();

  std::string out;
  out.reserve(16 + text.size() + offset);
  out.append(kPackedMagic);
  put_u64(out, text.size());
  out.append(text);
  for (const NamedTensor& t : packed.tensors) {
    for (double v : t.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

PackedWeights decode_packed(std::string_view bytes) {
  if (bytes.size() < 16) throw FormatError("packed weights: truncated header");
  if (bytes.substr(0, 4) != kPackedMagic.substr(0, 4)) throw FormatError("packed weights: bad magic");
  if (bytes.substr(0, 8) != kPackedMagic) {
    throw FormatError("packed weights: unsupported format version '" + std::string(bytes.substr(4, 4)) + "'");
  }
  const std::uint64_t manifest_len = get_u64(bytes, 8);
  if (manifest_len > bytes.size() - 16) throw FormatError("packed weights: truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("packed weights: malformed manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw FormatError("packed weights: manifest lacks a tensor table");
  }
  if (manifest.value("format_version", -1) != kPackedFormatVersion) {
    throw FormatError("packed weights: manifest format_version mismatch");
  }

  const std::string_view payload = bytes.substr(16 + manifest_len);
  PackedWeights out;
  std::uint64_t expected_offset = 0;
  try {
    for (const auto& entry : manifest["tensors"]) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      std::size_t count = 1;
      for (std::size_t d : shape) count *= d;
      if (offset != expected_offset) {
        throw FormatError("packed weights: tensor '" + t.name + "' has inconsistent offset");
      }
      if (offset + 8 * count > payload.size()) {
        throw FormatError("packed weights: payload truncated in tensor '" + t.name + "'");
      }
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        values[i] = std::bit_cast<double>(get_u64(payload, offset + 8 * i));
      }
      t.tensor = Tensor(shape, std::move(values));
      expected_offset = offset + 8 * count;
      out.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("packed weights: malformed tensor table: ") + e.what());
  }
  if (expected_offset != payload.size()) {
    throw FormatError("packed weights: payload size does not match the tensor table");
  }
  manifest.erase("tensors");
  manifest.erase("format_version");
  out.metadata = std::move(manifest);
  return out;
}

void write_packed(const std::string& path, const PackedWeights& packed) {
  const std::string bytes = encode_packed(packed);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

PackedWeights read_packed(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_packed(ss.str());
}

}  // namespace edgefool

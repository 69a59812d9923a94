#include "edgefool/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "edgefool/error.hpp"

namespace edgefool {

namespace {

std::string lower_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)); }

std::vector<std::uint8_t> interleave(const Image& img) {
  require_image(img, "write_image");
  const std::size_t h = img.dim(1);
  const std::size_t w = img.dim(2);
  std::vector<std::uint8_t> bytes(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) bytes[(y * w + x) * 3 + c] = to_byte(img.at(c, y, x));
    }
  }
  return bytes;
}

Image deinterleave(const std::uint8_t* bytes, std::size_t h, std::size_t w) {
  Image img = make_image(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = bytes[(y * w + x) * 3 + c] / 255.0;
    }
  }
  return img;
}

}  // namespace

bool is_image_path(const std::string& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".ppm";
}

Image read_image(const std::string& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw FormatError("'" + path + "': unsupported image extension (expected .png or .ppm)");
}

void write_image(const std::string& path, const Image& img) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".ppm") return write_ppm(path, img);
  throw FormatError("'" + path + "': unsupported image extension (expected .png or .ppm)");
}

Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError("'" + path + "': cannot read PNG (" + png.message + ")");
  }
  const png_uint_32 fmt = png.format;
  const bool rgb = (fmt & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (fmt & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool wide = (fmt & PNG_FORMAT_FLAG_LINEAR) != 0;
  if (!rgb || alpha || wide) {
    png_image_free(&png);
    throw FormatError("'" + path + "': not an 8-bit RGB image" + (alpha ? " (has alpha)" : "") +
                      (!rgb ? " (grayscale)" : "") + (wide ? " (16-bit)" : ""));
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError("'" + path + "': corrupt PNG (" + msg + ")");
  }
  return deinterleave(buffer.data(), png.height, png.width);
}

void write_png(const std::string& path, const Image& img) {
  const std::vector<std::uint8_t> bytes = interleave(img);
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.dim(2));
  png.height = static_cast<png_uint_32>(img.dim(1));
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw Error("'" + path + "': cannot write PNG (" + png.message + ")");
  }
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw FormatError("'" + path + "': truncated PPM header");
  return tok;
}

std::size_t ppm_number(std::istream& is, const std::string& path, const char* field) {
  const std::string tok = ppm_token(is, path);
  if (tok.empty() || tok.size() > 9 ||
      !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw FormatError("'" + path + "': bad PPM " + field + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("'" + path + "': cannot open");
  const std::string magic = ppm_token(is, path);
  if (magic != "P6") {
    throw FormatError("'" + path + "': not a binary RGB PPM (magic '" + magic + "', expected P6)");
  }
  const std::size_t w = ppm_number(is, path, "width");
  const std::size_t h = ppm_number(is, path, "height");
  const std::size_t maxval = ppm_number(is, path, "maxval");
  if (w == 0 || h == 0) throw FormatError("'" + path + "': empty PPM");
  if (maxval != 255) throw FormatError("'" + path + "': only 8-bit PPM (maxval 255) is supported");
  std::vector<std::uint8_t> bytes(3 * w * h);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw FormatError("'" + path + "': truncated PPM data");
  return deinterleave(bytes.data(), h, w);
}

void write_ppm(const std::string& path, const Image& img) {
  const std::vector<std::uint8_t> bytes = interleave(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("'" + path + "': cannot write");
  os << "P6\n" << img.dim(2) << ' ' << img.dim(1) << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("'" + path + "': write failed");
}

Image quantize8(const Image& img) {
  Image out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = to_byte(img[i]) / 255.0;
  return out;
}

}  // namespace edgefool

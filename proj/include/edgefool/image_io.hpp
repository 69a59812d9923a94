#pragma once

#include <string>

#include "edgefool/image.hpp"

namespace edgefool {

// Format chosen by extension (.png, .ppm; case-insensitive). Only 8-bit RGB
// files are accepted; samples map to v / 255.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

Image read_png(const std::string& path);
Image read_ppm(const std::string& path);
void write_png(const std::string& path, const Image& img);
void write_ppm(const std::string& path, const Image& img);

bool is_image_path(const std::string& path);

// Snap to the 8-bit grid: floor(clamp(x) * 255 + 0.5) / 255.
Image quantize8(const Image& img);

}  // namespace edgefool

#pragma once

#include <string>

#include "fsd/image.hpp"

namespace fsd {

// 16-bit RGB PNG. Values are clamped to [0, 1] and quantized to 65535 steps.
void write_png16(const std::string& path, const ImageBuf& img);
ImageBuf read_png16(const std::string& path);

// 8-bit grayscale PNG of a single-channel buffer, min/max normalized.
// Convenience output for eyeballing depth and error maps.
void write_png_gray8(const std::string& path, const ImageBuf& img);

// PFM, little-endian, 1 or 3 channels. Lossless for float data.
void write_pfm(const std::string& path, const ImageBuf& img);
ImageBuf read_pfm(const std::string& path);

}  // namespace fsd

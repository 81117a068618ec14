#pragma once

#include <filesystem>

#include "dsguard/image.hpp"

namespace dsguard {

/// 8-bit grey or RGB PNG. Palette, 16-bit and alpha inputs are converted
/// (alpha stripped) on read.
Image read_png(const std::filesystem::path& path);
/// Output bytes depend only on the image (fixed compression settings, no
/// timestamp chunk).
void write_png(const std::filesystem::path& path, const Image& image);

/// Binary PGM (P5) / PPM (P6), maxval 255.
Image read_pnm(const std::filesystem::path& path);

/// Dispatches on extension. Rejects lossy formats with kLossyFormat.
Image read_image(const std::filesystem::path& path);

bool is_lossy_extension(const std::filesystem::path& path);
bool is_supported_image_extension(const std::filesystem::path& path);

}  // namespace dsguard

#include "dsguard/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "dsguard/error.hpp"

namespace dsguard {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  File f = open_file(path, "rb");
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "libpng initialisation failed");
  }
  // Nothing with a destructor may be live across setjmp/longjmp below.
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kMalformed, path.string() + ": " + message);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kMalformed, path.string() + ": unsupported channel count " + std::to_string(channels));
  }
  buffer.resize(static_cast<std::size_t>(width) * height * channels);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return Image(static_cast<int>(height), static_cast<int>(width), channels, std::move(buffer));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  File f = open_file(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng initialisation failed");
  }
  std::vector<png_bytep> rows(image.height());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, path.string() + ": " + message);
  }
  png_init_io(png, f.get());
  png_set_compression_level(png, 9);
  png_set_IHDR(png, info, image.width(), image.height(), 8,
               image.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* base = const_cast<std::uint8_t*>(image.pixels().data());
  for (int y = 0; y < image.height(); ++y) {
    rows[y] = base + static_cast<std::size_t>(y) * image.width() * image.channels();
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(f.get()) != 0) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    int v = -1;
    in >> v;
    return v;
  };
  const int width = next_int();
  const int height = next_int();
  const int maxval = next_int();
  if ((magic != "P5" && magic != "P6") || width <= 0 || height <= 0 || maxval != 255) {
    throw Error(ErrorCode::kMalformed, path.string() + ": only binary P5/P6 with maxval 255 is supported");
  }
  in.get();
  const int channels = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size())) {
    throw Error(ErrorCode::kMalformed, path.string() + ": truncated pixel data");
  }
  return Image(height, width, channels, std::move(pixels));
}

bool is_lossy_extension(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  return ext == ".jpg" || ext == ".jpeg" || ext == ".jpe" || ext == ".jfif" || ext == ".webp";
}

bool is_supported_image_extension(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

Image read_image(const std::filesystem::path& path) {
  if (is_lossy_extension(path)) {
    throw Error(ErrorCode::kLossyFormat,
                path.string() + ": lossy format; an LSB payload would not survive re-encoding");
  }
  const auto ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm") return read_pnm(path);
  throw Error(ErrorCode::kInvalidArgument, path.string() + ": unsupported image format");
}

}  // namespace dsguard

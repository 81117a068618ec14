#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace dsguard {

/// Owned 8-bit raster, row-major, channel-interleaved (HWC).
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, std::uint8_t fill = 0);
  Image(int height, int width, int channels, std::vector<std::uint8_t> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  std::uint8_t at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<std::uint8_t> pixels() noexcept { return pixels_; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  bool same_geometry(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// A square B x B x channels tile. Pixel layout matches Image (HWC).
using Block = Image;

struct BlockGrid {
  int block_size = 0;
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<Block> blocks;  // row-major tile order
};

/// Per-channel block statistics. Means are kept as exact integer sums so the
/// pairing step never depends on floating-point behaviour.
struct BlockStats {
  std::vector<std::int64_t> sum;    // per channel
  std::int64_t count = 0;           // samples per channel (B*B)
  std::vector<std::int64_t> sd_fp;  // per channel, standard deviation * kSdScale, rounded
  /// sd of the per-pixel luminance proxy (R + 2G + B) / 4 for colour blocks,
  /// of the single channel otherwise; same fixed-point scale.
  std::int64_t luma_sd_fp = 0;

  static constexpr std::int64_t kSdScale = 256;

  double mean(int c) const { return static_cast<double>(sum[c]) / static_cast<double>(count); }
  double sd(int c) const { return static_cast<double>(sd_fp[c]) / kSdScale; }
};

BlockGrid split_blocks(const Image& image, int block_size);
Image assemble(const BlockGrid& grid);

BlockStats block_stats(const Block& block);

/// k counter-clockwise quarter turns; k is taken mod 4 (negative allowed).
Block rotate_block(const Block& block, int k);

/// Returned by psnr() for identical images.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

double psnr(const Image& a, const Image& b);

}  // namespace dsguard

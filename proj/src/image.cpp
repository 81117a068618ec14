#include "dsguard/image.hpp"

#include <cmath>
#include <string>

#include "dsguard/error.hpp"

namespace dsguard {
namespace {

using u128 = unsigned __int128;

u128 isqrt(u128 v) {
  if (v < 2) return v;
  // Newton from an overestimate; converges monotonically downward.
  u128 x = static_cast<u128>(std::sqrt(static_cast<long double>(v))) + 2;
  while (true) {
    u128 y = (x + v / x) / 2;
    if (y >= x) break;
    x = y;
  }
  while (x * x > v) --x;
  while ((x + 1) * (x + 1) <= v) ++x;
  return x;
}

void check_geometry(int height, int width, int channels) {
  if (height < 0 || width < 0 || (channels != 1 && channels != 3 && !(height == 0 && width == 0))) {
    throw Error(ErrorCode::kDimension, "image geometry " + std::to_string(height) + "x" +
                                           std::to_string(width) + "x" + std::to_string(channels) +
                                           " is invalid (channels must be 1 or 3)");
  }
}

}  // namespace

Image::Image(int height, int width, int channels, std::uint8_t fill)
    : height_(height), width_(width), channels_(channels) {
  check_geometry(height, width, channels);
  pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<std::uint8_t> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
  check_geometry(height, width, channels);
  if (pixels_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error(ErrorCode::kDimension, "pixel buffer holds " + std::to_string(pixels_.size()) +
                                           " samples, geometry needs " +
                                           std::to_string(static_cast<std::size_t>(height) * width * channels));
  }
}

BlockGrid split_blocks(const Image& image, int block_size) {
  if (block_size < 2) {
    throw Error(ErrorCode::kInvalidArgument, "block size must be >= 2, got " + std::to_string(block_size));
  }
  if (image.height() % block_size != 0) {
    throw Error(ErrorCode::kDimension, "height " + std::to_string(image.height()) +
                                           " is not divisible by block size " + std::to_string(block_size));
  }
  if (image.width() % block_size != 0) {
    throw Error(ErrorCode::kDimension, "width " + std::to_string(image.width()) +
                                           " is not divisible by block size " + std::to_string(block_size));
  }
  BlockGrid grid;
  grid.block_size = block_size;
  grid.rows = image.height() / block_size;
  grid.cols = image.width() / block_size;
  grid.channels = image.channels();
  grid.blocks.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
  const std::size_t row_bytes = static_cast<std::size_t>(block_size) * image.channels();
  for (int br = 0; br < grid.rows; ++br) {
    for (int bc = 0; bc < grid.cols; ++bc) {
      Block block(block_size, block_size, image.channels());
      for (int y = 0; y < block_size; ++y) {
        const auto src = image.pixels().subspan(
            (static_cast<std::size_t>(br * block_size + y) * image.width() + bc * block_size) * image.channels(),
            row_bytes);
        std::copy(src.begin(), src.end(), block.pixels().begin() + y * row_bytes);
      }
      grid.blocks.push_back(std::move(block));
    }
  }
  return grid;
}

Image assemble(const BlockGrid& grid) {
  const int b = grid.block_size;
  if (grid.blocks.size() != static_cast<std::size_t>(grid.rows) * grid.cols) {
    throw Error(ErrorCode::kDimension, "block grid has " + std::to_string(grid.blocks.size()) +
                                           " blocks, expected rows*cols");
  }
  Image image(grid.rows * b, grid.cols * b, grid.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(b) * grid.channels;
  for (int br = 0; br < grid.rows; ++br) {
    for (int bc = 0; bc < grid.cols; ++bc) {
      const Block& block = grid.blocks[static_cast<std::size_t>(br) * grid.cols + bc];
      if (block.height() != b || block.width() != b || block.channels() != grid.channels) {
        throw Error(ErrorCode::kDimension, "block geometry does not match grid");
      }
      for (int y = 0; y < b; ++y) {
        auto src = block.pixels().subspan(y * row_bytes, row_bytes);
        std::copy(src.begin(), src.end(),
                  image.pixels().begin() +
                      (static_cast<std::size_t>(br * b + y) * image.width() + bc * b) * grid.channels);
      }
    }
  }
  return image;
}

namespace {

// round(scale * sqrt(spread) / n), where spread = n^2 * variance
std::int64_t fixed_point_sd(u128 spread, std::int64_t count, std::int64_t scale) {
  const auto n = static_cast<u128>(count);
  const u128 scaled = spread * static_cast<u128>(scale * scale) * 4;
  return static_cast<std::int64_t>((isqrt(scaled) + n) / (2 * n));
}

}  // namespace

BlockStats block_stats(const Block& block) {
  const int channels = block.channels();
  BlockStats stats;
  stats.count = static_cast<std::int64_t>(block.height()) * block.width();
  stats.sum.assign(channels, 0);
  stats.sd_fp.assign(channels, 0);
  std::vector<std::int64_t> sumsq(channels, 0);
  std::int64_t luma_sum = 0;
  std::int64_t luma_sumsq = 0;
  const auto px = block.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::int64_t v = px[i];
    stats.sum[i % channels] += v;
    sumsq[i % channels] += v * v;
  }
  if (channels == 3) {
    for (std::size_t i = 0; i < px.size(); i += 3) {
      const std::int64_t l = px[i] + 2 * px[i + 1] + px[i + 2];
      luma_sum += l;
      luma_sumsq += l * l;
    }
  }
  if (stats.count == 0) return stats;
  for (int c = 0; c < channels; ++c) {
    const auto spread = static_cast<u128>(stats.count * sumsq[c] - stats.sum[c] * stats.sum[c]);
    stats.sd_fp[c] = fixed_point_sd(spread, stats.count, BlockStats::kSdScale);
  }
  if (channels == 3) {
    // the proxy is l / 4, so its sd carries a quarter of the scale
    const auto spread = static_cast<u128>(stats.count * luma_sumsq - luma_sum * luma_sum);
    stats.luma_sd_fp = fixed_point_sd(spread, stats.count, BlockStats::kSdScale / 4);
  } else {
    stats.luma_sd_fp = stats.sd_fp[0];
  }
  return stats;
}

Block rotate_block(const Block& block, int k) {
  if (block.height() != block.width()) {
    throw Error(ErrorCode::kDimension, "rotate_block needs a square tile");
  }
  k = ((k % 4) + 4) % 4;
  if (k == 0) return block;
  const int n = block.height();
  const int ch = block.channels();
  Block out(n, n, ch);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      int sy = 0;
      int sx = 0;
      switch (k) {
        case 1: sy = x; sx = n - 1 - y; break;
        case 2: sy = n - 1 - y; sx = n - 1 - x; break;
        default: sy = n - 1 - x; sx = y; break;
      }
      for (int c = 0; c < ch; ++c) out.at(y, x, c) = block.at(sy, sx, c);
    }
  }
  return out;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_geometry(b)) {
    throw Error(ErrorCode::kDimension, "psnr needs images of equal geometry");
  }
  std::uint64_t sse = 0;
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const std::int64_t d = static_cast<std::int64_t>(pa[i]) - pb[i];
    sse += static_cast<std::uint64_t>(d * d);
  }
  if (sse == 0) return kPsnrInfinite;
  const double mse = static_cast<double>(sse) / static_cast<double>(pa.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace dsguard

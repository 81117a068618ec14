#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dsguard/image.hpp"

namespace dsguard {

struct RitParams {
  int block_size = 4;
  int quant_step = 4;  // power of two in [1, 16]

  void validate() const;
};

/// Side information needed to undo the block transformation: which clean block
/// went to each carrier position, how it was rotated, and its quantized mean
/// shift. This is the byte string that gets encrypted and hidden.
struct PairingPlan {
  int block_size = 0;
  int rows = 0;
  int cols = 0;
  int channels = 0;
  int quant_step = 1;
  std::vector<std::uint32_t> permutation;  // carrier position j <- clean block permutation[j]
  std::vector<std::uint8_t> rotations;     // per carrier position, 0..3
  std::vector<std::int16_t> dmean_q;       // [position * channels + c]

  std::size_t num_blocks() const { return static_cast<std::size_t>(rows) * cols; }

  /// Throws kMalformed on any broken invariant.
  void validate() const;

  friend bool operator==(const PairingPlan&, const PairingPlan&) = default;
};

/// Width in bits of one mean-shift code. 7 bits for steps >= 4; finer steps
/// widen the field so that |code * step| can still reach 255.
int dmean_code_bits(int quant_step);
/// Largest |code| that is both representable and satisfies |code * step| <= 255.
int dmean_code_limit(int quant_step);

/// Ranking key used for pairing: sd of the luminance proxy (R + 2G + B) / 4 for
/// colour blocks, plain sd for grey blocks, in BlockStats fixed-point units.
std::int64_t pairing_key(const BlockStats& stats);

std::vector<std::uint32_t> pair_blocks(std::span<const BlockStats> clean_stats,
                                       std::span<const BlockStats> carrier_stats);

struct BlockTransform {
  Block block;
  int rotation = 0;
  std::vector<std::int16_t> dmean_q;  // per channel
};

BlockTransform transform_block(const Block& clean, const Block& carrier, int quant_step);

/// Inverse of transform_block given its side information.
Block restore_block(const Block& transformed, int rotation, std::span<const std::int16_t> dmean_q,
                    int quant_step);

struct RitResult {
  Image core;  // mimics the carrier, before any LSB embedding
  PairingPlan plan;
};

RitResult build_plan(const Image& clean, const Image& carrier, const RitParams& params);

Image invert_plan(const Image& core, const PairingPlan& plan);

std::vector<std::uint8_t> serialize_plan(const PairingPlan& plan);
PairingPlan parse_plan(std::span<const std::uint8_t> bytes);

/// Size serialize_plan() produces for the given geometry, without building a plan.
std::size_t serialized_plan_size(int rows, int cols, int channels, int quant_step);

}  // namespace dsguard

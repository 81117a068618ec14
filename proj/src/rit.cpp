#include "dsguard/rit.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <string>

#include "bitstream.hpp"
#include "dsguard/error.hpp"

namespace dsguard {
namespace {

constexpr int kMaxQuantExponent = 4;

std::int64_t floor_div(std::int64_t num, std::int64_t den) {
  std::int64_t q = num / den;
  if ((num % den != 0) && ((num < 0) != (den < 0))) --q;
  return q;
}

int quant_exponent(int quant_step) { return std::countr_zero(static_cast<unsigned>(quant_step)); }

int permutation_bits(std::size_t n) {
  int bits = 0;
  while ((std::size_t{1} << bits) < n) ++bits;
  return std::max(bits, 1);
}

std::uint8_t clamp_u8(std::int64_t v) { return static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255)); }

}  // namespace

void RitParams::validate() const {
  if (block_size < 2 || block_size > 255) {
    throw Error(ErrorCode::kInvalidArgument, "block_size must be in [2, 255], got " + std::to_string(block_size));
  }
  if (quant_step < 1 || quant_step > 16 || !std::has_single_bit(static_cast<unsigned>(quant_step))) {
    throw Error(ErrorCode::kInvalidArgument,
                "quant_step must be a power of two in [1, 16], got " + std::to_string(quant_step));
  }
}

int dmean_code_bits(int quant_step) { return std::max(7, 9 - quant_exponent(quant_step)); }

int dmean_code_limit(int quant_step) {
  const int representable = (1 << (dmean_code_bits(quant_step) - 1)) - 1;
  return std::min(representable, 255 / quant_step);
}

void PairingPlan::validate() const {
  if (block_size < 2 || block_size > 255) throw Error(ErrorCode::kMalformed, "plan block size out of range");
  if (quant_step < 1 || quant_step > 16 || !std::has_single_bit(static_cast<unsigned>(quant_step))) {
    throw Error(ErrorCode::kMalformed, "plan quant step must be a power of two in [1, 16]");
  }
  if (rows < 1 || cols < 1 || rows > 255 || cols > 255) {
    throw Error(ErrorCode::kMalformed, "plan grid must be 1..255 rows and cols");
  }
  if (channels != 1 && channels != 3) throw Error(ErrorCode::kMalformed, "plan channels must be 1 or 3");
  const std::size_t n = num_blocks();
  if (permutation.size() != n || rotations.size() != n || dmean_q.size() != n * channels) {
    throw Error(ErrorCode::kMalformed, "plan field lengths do not match grid");
  }
  std::vector<bool> seen(n, false);
  for (auto p : permutation) {
    if (p >= n || seen[p]) throw Error(ErrorCode::kMalformed, "plan permutation is not a bijection");
    seen[p] = true;
  }
  for (auto k : rotations) {
    if (k > 3) throw Error(ErrorCode::kMalformed, "rotation out of range");
  }
  const int limit = dmean_code_limit(quant_step);
  for (auto q : dmean_q) {
    if (q < -limit || q > limit) {
      throw Error(ErrorCode::kMalformed, "mean-shift code " + std::to_string(q) + " out of range");
    }
  }
}

std::int64_t pairing_key(const BlockStats& stats) { return stats.luma_sd_fp; }

std::vector<std::uint32_t> pair_blocks(std::span<const BlockStats> clean_stats,
                                       std::span<const BlockStats> carrier_stats) {
  if (clean_stats.size() != carrier_stats.size()) {
    throw Error(ErrorCode::kDimension, "pair_blocks: " + std::to_string(clean_stats.size()) + " clean vs " +
                                           std::to_string(carrier_stats.size()) + " carrier blocks");
  }
  auto rank_order = [](std::span<const BlockStats> stats) {
    std::vector<std::uint32_t> order(stats.size());
    std::iota(order.begin(), order.end(), 0U);
    std::vector<std::int64_t> keys(stats.size());
    std::transform(stats.begin(), stats.end(), keys.begin(), pairing_key);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
    });
    return order;
  };
  const auto clean_order = rank_order(clean_stats);
  const auto carrier_order = rank_order(carrier_stats);
  std::vector<std::uint32_t> permutation(clean_stats.size());
  for (std::size_t r = 0; r < permutation.size(); ++r) permutation[carrier_order[r]] = clean_order[r];
  return permutation;
}

BlockTransform transform_block(const Block& clean, const Block& carrier, int quant_step) {
  if (!clean.same_geometry(carrier) || clean.height() != clean.width()) {
    throw Error(ErrorCode::kDimension, "transform_block needs two square tiles of equal geometry");
  }
  const auto clean_stats = block_stats(clean);
  const auto carrier_stats = block_stats(carrier);
  const std::int64_t n = clean_stats.count;
  const int ch = clean.channels();

  BlockTransform best;
  std::uint64_t best_sse = ~std::uint64_t{0};
  for (int k = 0; k < 4; ++k) {
    Block candidate = rotate_block(clean, k);
    auto px = candidate.pixels();
    const auto target = carrier.pixels();
    std::uint64_t sse = 0;
    for (std::size_t i = 0; i < px.size(); ++i) {
      const int c = static_cast<int>(i % ch);
      // round(x - m_c + m_t), ties upward; equal to half-away-from-zero wherever
      // the result survives clamping.
      const std::int64_t num = n * px[i] - clean_stats.sum[c] + carrier_stats.sum[c];
      px[i] = clamp_u8(floor_div(2 * num + n, 2 * n));
      const std::int64_t d = static_cast<std::int64_t>(px[i]) - target[i];
      sse += static_cast<std::uint64_t>(d * d);
    }
    if (sse < best_sse) {
      best_sse = sse;
      best.block = std::move(candidate);
      best.rotation = k;
    }
  }

  // Ties round downward so that at quant_step 1 the shift cancels the pixel
  // rounding above exactly.
  const int limit = dmean_code_limit(quant_step);
  best.dmean_q.resize(ch);
  for (int c = 0; c < ch; ++c) {
    const std::int64_t num = clean_stats.sum[c] - carrier_stats.sum[c];
    const std::int64_t den = n * quant_step;
    const std::int64_t q = -floor_div(-2 * num + den, 2 * den);
    best.dmean_q[c] = static_cast<std::int16_t>(std::clamp<std::int64_t>(q, -limit, limit));
  }
  return best;
}

Block restore_block(const Block& transformed, int rotation, std::span<const std::int16_t> dmean_q,
                    int quant_step) {
  Block out = rotate_block(transformed, -rotation);
  const int ch = out.channels();
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = clamp_u8(static_cast<std::int64_t>(px[i]) + static_cast<std::int64_t>(dmean_q[i % ch]) * quant_step);
  }
  return out;
}

RitResult build_plan(const Image& clean, const Image& carrier, const RitParams& params) {
  params.validate();
  if (!clean.same_geometry(carrier)) {
    throw Error(ErrorCode::kDimension, "clean and carrier images differ in geometry");
  }
  const BlockGrid clean_grid = split_blocks(clean, params.block_size);
  const BlockGrid carrier_grid = split_blocks(carrier, params.block_size);
  if (clean_grid.rows > 255 || clean_grid.cols > 255) {
    throw Error(ErrorCode::kDimension, "block grid exceeds 255 rows or columns");
  }

  std::vector<BlockStats> clean_stats;
  std::vector<BlockStats> carrier_stats;
  for (const auto& b : clean_grid.blocks) clean_stats.push_back(block_stats(b));
  for (const auto& b : carrier_grid.blocks) carrier_stats.push_back(block_stats(b));

  RitResult result;
  PairingPlan& plan = result.plan;
  plan.block_size = params.block_size;
  plan.rows = clean_grid.rows;
  plan.cols = clean_grid.cols;
  plan.channels = clean.channels();
  plan.quant_step = params.quant_step;
  plan.permutation = pair_blocks(clean_stats, carrier_stats);
  plan.rotations.resize(plan.num_blocks());
  plan.dmean_q.resize(plan.num_blocks() * plan.channels);

  BlockGrid core_grid = carrier_grid;
  for (std::size_t j = 0; j < plan.num_blocks(); ++j) {
    auto t = transform_block(clean_grid.blocks[plan.permutation[j]], carrier_grid.blocks[j], params.quant_step);
    core_grid.blocks[j] = std::move(t.block);
    plan.rotations[j] = static_cast<std::uint8_t>(t.rotation);
    std::copy(t.dmean_q.begin(), t.dmean_q.end(), plan.dmean_q.begin() + j * plan.channels);
  }
  result.core = assemble(core_grid);
  return result;
}

Image invert_plan(const Image& core, const PairingPlan& plan) {
  plan.validate();
  if (core.height() != plan.rows * plan.block_size || core.width() != plan.cols * plan.block_size ||
      core.channels() != plan.channels) {
    throw Error(ErrorCode::kDimension, "plan geometry does not match the image");
  }
  BlockGrid grid = split_blocks(core, plan.block_size);
  BlockGrid restored = grid;
  for (std::size_t j = 0; j < plan.num_blocks(); ++j) {
    restored.blocks[plan.permutation[j]] =
        restore_block(grid.blocks[j], plan.rotations[j],
                      std::span(plan.dmean_q).subspan(j * plan.channels, plan.channels), plan.quant_step);
  }
  return assemble(restored);
}

std::size_t serialized_plan_size(int rows, int cols, int channels, int quant_step) {
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  const std::size_t per_block = permutation_bits(n) + 2 + static_cast<std::size_t>(channels) * dmean_code_bits(quant_step);
  return 5 + (n * per_block + 7) / 8;
}

// Header (5 bytes): block_size:8, rows:8, cols:8, quant_exp:4 | channels:2 |
// reserved:2, dmean_bits:8. Body: per position, permutation index, rotation:2,
// then one dmean code per channel. Body is zero-padded to a byte boundary.
std::vector<std::uint8_t> serialize_plan(const PairingPlan& plan) {
  plan.validate();
  detail::BitWriter w;
  w.put(plan.block_size, 8);
  w.put(plan.rows, 8);
  w.put(plan.cols, 8);
  w.put(quant_exponent(plan.quant_step), 4);
  w.put(plan.channels, 2);
  w.put(0, 2);
  const int code_bits = dmean_code_bits(plan.quant_step);
  w.put(code_bits, 8);
  const int perm_bits = permutation_bits(plan.num_blocks());
  const std::uint64_t code_mask = (1ULL << code_bits) - 1;
  for (std::size_t j = 0; j < plan.num_blocks(); ++j) {
    w.put(plan.permutation[j], perm_bits);
    w.put(plan.rotations[j], 2);
    for (int c = 0; c < plan.channels; ++c) {
      w.put(static_cast<std::uint64_t>(static_cast<std::int64_t>(plan.dmean_q[j * plan.channels + c])) & code_mask,
            code_bits);
    }
  }
  return std::move(w).take();
}

PairingPlan parse_plan(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5) throw Error(ErrorCode::kMalformed, "plan shorter than its 5-byte header");
  detail::BitReader r(bytes);
  PairingPlan plan;
  plan.block_size = static_cast<int>(r.get(8));
  plan.rows = static_cast<int>(r.get(8));
  plan.cols = static_cast<int>(r.get(8));
  const int exponent = static_cast<int>(r.get(4));
  plan.channels = static_cast<int>(r.get(2));
  const auto reserved = r.get(2);
  const int code_bits = static_cast<int>(r.get(8));
  if (reserved != 0) throw Error(ErrorCode::kMalformed, "reserved plan header bits set");
  if (exponent > kMaxQuantExponent) throw Error(ErrorCode::kMalformed, "quant exponent out of range");
  plan.quant_step = 1 << exponent;
  if (plan.block_size < 2) throw Error(ErrorCode::kMalformed, "block size out of range");
  if (plan.rows < 1 || plan.cols < 1) throw Error(ErrorCode::kMalformed, "empty plan grid");
  if (plan.channels != 1 && plan.channels != 3) throw Error(ErrorCode::kMalformed, "plan channels must be 1 or 3");
  if (code_bits != dmean_code_bits(plan.quant_step)) {
    throw Error(ErrorCode::kMalformed, "mean-shift code width does not match quant step");
  }
  const std::size_t expected = serialized_plan_size(plan.rows, plan.cols, plan.channels, plan.quant_step);
  if (bytes.size() != expected) {
    throw Error(ErrorCode::kMalformed, "plan is " + std::to_string(bytes.size()) + " bytes, header implies " +
                                           std::to_string(expected));
  }
  const std::size_t n = plan.num_blocks();
  const int perm_bits = permutation_bits(n);
  plan.permutation.resize(n);
  plan.rotations.resize(n);
  plan.dmean_q.resize(n * plan.channels);
  for (std::size_t j = 0; j < n; ++j) {
    plan.permutation[j] = static_cast<std::uint32_t>(r.get(perm_bits));
    plan.rotations[j] = static_cast<std::uint8_t>(r.get(2));
    for (int c = 0; c < plan.channels; ++c) {
      plan.dmean_q[j * plan.channels + c] = static_cast<std::int16_t>(detail::sign_extend(r.get(code_bits), code_bits));
    }
  }
  if (r.get(static_cast<int>(r.bits_left())) != 0) throw Error(ErrorCode::kMalformed, "nonzero plan padding");
  plan.validate();
  return plan;
}

}  // namespace dsguard

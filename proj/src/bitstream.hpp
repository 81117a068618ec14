#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dsguard/error.hpp"

namespace dsguard::detail {

// Fields are packed least-significant bit first; stream bit i lives in
// byte i / 8 at bit position i % 8.
class BitWriter {
 public:
  void put(std::uint64_t value, int bits) {
    for (int i = 0; i < bits; ++i) {
      if (pos_ % 8 == 0) bytes_.push_back(0);
      if ((value >> i) & 1U) bytes_.back() |= static_cast<std::uint8_t>(1U << (pos_ % 8));
      ++pos_;
    }
  }

  std::vector<std::uint8_t> take() && { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t get(int bits) {
    if (pos_ + static_cast<std::size_t>(bits) > bytes_.size() * 8) {
      throw Error(ErrorCode::kMalformed, "bit stream truncated");
    }
    std::uint64_t value = 0;
    for (int i = 0; i < bits; ++i, ++pos_) {
      value |= static_cast<std::uint64_t>((bytes_[pos_ / 8] >> (pos_ % 8)) & 1U) << i;
    }
    return value;
  }

  std::size_t position() const { return pos_; }
  std::size_t bits_left() const { return bytes_.size() * 8 - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::int64_t sign_extend(std::uint64_t value, int bits) {
  const std::uint64_t sign = 1ULL << (bits - 1);
  return static_cast<std::int64_t>((value ^ sign)) - static_cast<std::int64_t>(sign);
}

}  // namespace dsguard::detail

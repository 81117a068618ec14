#include "dsguard/stego.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "dsguard/error.hpp"

namespace dsguard {
namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'S', 'G', '1'};

void check_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < SequencePayload::kHeaderBytes) {
    throw Error(ErrorCode::kMalformed, "payload shorter than its 21-byte header");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::kMalformed, "payload magic is not DSG1");
  }
  if (bytes[4] != SequencePayload::kVersion) {
    throw Error(ErrorCode::kMalformed, "unsupported payload version " + std::to_string(bytes[4]));
  }
}

std::uint32_t read_le32(std::span<const std::uint8_t> b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

Bytes SequencePayload::header() const {
  Bytes out(std::begin(kMagic), std::end(kMagic));
  out.push_back(version);
  const auto len = static_cast<std::uint32_t>(ciphertext.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), nonce.begin(), nonce.end());
  return out;
}

Bytes SequencePayload::encode() const {
  Bytes out = header();
  out.insert(out.end(), ciphertext.begin(), ciphertext.end());
  return out;
}

SequencePayload SequencePayload::decode(std::span<const std::uint8_t> bytes) {
  check_header(bytes);
  SequencePayload p;
  p.version = bytes[4];
  const std::uint32_t len = read_le32(bytes.subspan(5, 4));
  std::copy_n(bytes.begin() + 9, p.nonce.size(), p.nonce.begin());
  if (len < kTagBytes || bytes.size() != kHeaderBytes + len) {
    throw Error(ErrorCode::kMalformed, "payload length field " + std::to_string(len) + " inconsistent with " +
                                           std::to_string(bytes.size()) + " payload bytes");
  }
  p.ciphertext.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return p;
}

SequencePayload encrypt_sequence(std::span<const std::uint8_t> plan_bytes, const KeyRecord& key, const Nonce& nonce) {
  SequencePayload p;
  p.nonce = nonce;
  // The header carries the ciphertext length, which is known before sealing.
  p.ciphertext.resize(plan_bytes.size() + kTagBytes);
  const Bytes aad = p.header();
  p.ciphertext = aes256_gcm_seal(key.master_key, nonce, aad, plan_bytes);
  return p;
}

Bytes decrypt_sequence(const SequencePayload& payload, const KeyRecord& key) {
  if (payload.version != SequencePayload::kVersion) {
    throw Error(ErrorCode::kMalformed, "unsupported payload version " + std::to_string(payload.version));
  }
  if (payload.ciphertext.size() < kTagBytes) throw Error(ErrorCode::kMalformed, "ciphertext shorter than tag");
  return aes256_gcm_open(key.master_key, payload.nonce, payload.header(), payload.ciphertext);
}

std::size_t lsb_capacity(const Image& image) { return image.size(); }

Image lsb_embed(const Image& image, std::span<const std::uint8_t> payload) {
  const std::size_t required = payload.size() * 8;
  const std::size_t available = lsb_capacity(image);
  if (required > available) {
    throw Error(ErrorCode::kCapacityExceeded,
                "payload needs " + std::to_string(required) + " bits, image holds " + std::to_string(available));
  }
  Image out = image;
  auto px = out.pixels();
  for (std::size_t i = 0; i < required; ++i) {
    const std::uint8_t bit = (payload[i / 8] >> (7 - i % 8)) & 1U;
    px[i] = static_cast<std::uint8_t>((px[i] & 0xFE) | bit);
  }
  return out;
}

Bytes lsb_extract_bits(const Image& image, std::size_t nbits) {
  if (nbits > lsb_capacity(image)) {
    throw Error(ErrorCode::kCapacityExceeded,
                "cannot read " + std::to_string(nbits) + " bits from " + std::to_string(lsb_capacity(image)));
  }
  Bytes out((nbits + 7) / 8, 0);
  const auto px = image.pixels();
  for (std::size_t i = 0; i < nbits; ++i) {
    out[i / 8] |= static_cast<std::uint8_t>((px[i] & 1U) << (7 - i % 8));
  }
  return out;
}

SequencePayload lsb_extract(const Image& image) {
  const std::size_t capacity_bytes = lsb_capacity(image) / 8;
  if (capacity_bytes < SequencePayload::kHeaderBytes) {
    throw Error(ErrorCode::kMalformed, "image too small to hold a payload header");
  }
  const Bytes header = lsb_extract_bits(image, SequencePayload::kHeaderBytes * 8);
  check_header(header);
  const std::uint32_t len = read_le32(std::span(header).subspan(5, 4));
  if (len < kTagBytes || SequencePayload::kHeaderBytes + static_cast<std::size_t>(len) > capacity_bytes) {
    throw Error(ErrorCode::kMalformed, "payload length " + std::to_string(len) + " exceeds image capacity");
  }
  return SequencePayload::decode(lsb_extract_bits(image, (SequencePayload::kHeaderBytes + len) * 8));
}

}  // namespace dsguard

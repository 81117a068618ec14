#pragma once

#include <cstdint>
#include <span>

#include "dsguard/crypto.hpp"
#include "dsguard/image.hpp"

namespace dsguard {

/// Wire layout, all embedded MSB-first into the sample LSB plane:
///   magic "DSG1" (4) | version (1) | ciphertext length, LE u32 (4) | nonce (12) | ciphertext+tag
/// The 21-byte header is sent in the clear and authenticated as associated data.
struct SequencePayload {
  static constexpr std::uint8_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 21;

  std::uint8_t version = kVersion;
  Nonce nonce{};
  Bytes ciphertext;  // includes the trailing 16-byte tag

  Bytes header() const;
  Bytes encode() const;
  std::size_t encoded_size() const { return kHeaderBytes + ciphertext.size(); }

  /// Parses a full encoded payload. Throws kMalformed on bad magic/version/length.
  static SequencePayload decode(std::span<const std::uint8_t> bytes);
};

/// Seals serialized plan bytes under `key`; the payload header is the AAD.
SequencePayload encrypt_sequence(std::span<const std::uint8_t> plan_bytes, const KeyRecord& key, const Nonce& nonce);
/// Returns the exact plan bytes or throws kAuthFail / kMalformed.
Bytes decrypt_sequence(const SequencePayload& payload, const KeyRecord& key);

/// Encoded payload size for a plaintext of `plan_bytes` bytes.
constexpr std::size_t payload_size_for_plan(std::size_t plan_bytes) {
  return SequencePayload::kHeaderBytes + plan_bytes + kTagBytes;
}

std::size_t lsb_capacity(const Image& image);

/// Payload bit i (MSB of byte 0 first) replaces the LSB of sample i.
/// Throws kCapacityExceeded before touching any sample.
Image lsb_embed(const Image& image, std::span<const std::uint8_t> payload);

/// Raw read of the first `nbits` LSBs, packed MSB-first (final byte zero-padded).
Bytes lsb_extract_bits(const Image& image, std::size_t nbits);

/// Reads the header to learn the payload length, then the rest.
SequencePayload lsb_extract(const Image& image);

}  // namespace dsguard

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dsguard {

using Bytes = std::vector<std::uint8_t>;
using Nonce = std::array<std::uint8_t, 12>;

inline constexpr std::size_t kTagBytes = 16;

/// The dataset master secret. Never written into any image.
struct KeyRecord {
  std::array<std::uint8_t, 32> master_key{};
  std::array<std::uint8_t, 16> key_id{};

  /// Fresh key material from the OS CSPRNG.
  static KeyRecord generate();

  friend bool operator==(const KeyRecord&, const KeyRecord&) = default;
};

/// Key file: "DSGK" | key_id (16) | master_key (32). Written with mode 0600.
void write_key_file(const std::filesystem::path& path, const KeyRecord& key);
KeyRecord read_key_file(const std::filesystem::path& path);

/// AES-256-GCM. Output is ciphertext followed by the 16-byte tag.
Bytes aes256_gcm_seal(std::span<const std::uint8_t> key, std::span<const std::uint8_t> iv,
                      std::span<const std::uint8_t> aad, std::span<const std::uint8_t> plaintext);
/// Throws Error(kAuthFail) if the tag does not verify; never returns unverified bytes.
Bytes aes256_gcm_open(std::span<const std::uint8_t> key, std::span<const std::uint8_t> iv,
                      std::span<const std::uint8_t> aad, std::span<const std::uint8_t> sealed);

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);
std::array<std::uint8_t, 32> hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data);

/// Per-record nonce: truncated SHA-256 of (dataset salt || record index). The
/// salt is derived from the master key and the run seed so protection stays
/// reproducible for a fixed (dataset, key, seed).
std::array<std::uint8_t, 16> derive_nonce_salt(const KeyRecord& key, std::uint64_t seed);
Nonce derive_nonce(std::span<const std::uint8_t> salt, std::uint64_t index);

std::string to_hex(std::span<const std::uint8_t> bytes);
Bytes from_hex(std::string_view hex);

}  // namespace dsguard

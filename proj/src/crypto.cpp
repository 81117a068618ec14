#include "dsguard/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <openssl/sha.h>
#include <sys/stat.h>

#include <cstring>
#include <fstream>
#include <memory>

#include "dsguard/error.hpp"

namespace dsguard {
namespace {

constexpr char kKeyMagic[4] = {'D', 'S', 'G', 'K'};

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

CipherCtx make_gcm_ctx(std::span<const std::uint8_t> key, std::span<const std::uint8_t> iv, bool encrypt) {
  if (key.size() != 32) throw Error(ErrorCode::kInvalidArgument, "AES-256 key must be 32 bytes");
  if (iv.empty()) throw Error(ErrorCode::kInvalidArgument, "GCM IV must be non-empty");
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw Error(ErrorCode::kIo, "EVP_CIPHER_CTX_new failed");
  auto init = encrypt ? EVP_EncryptInit_ex : EVP_DecryptInit_ex;
  if (init(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(iv.size()), nullptr) != 1 ||
      init(ctx.get(), nullptr, nullptr, key.data(), iv.data()) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM initialisation failed");
  }
  return ctx;
}

}  // namespace

KeyRecord KeyRecord::generate() {
  KeyRecord key;
  if (RAND_bytes(key.master_key.data(), static_cast<int>(key.master_key.size())) != 1 ||
      RAND_bytes(key.key_id.data(), static_cast<int>(key.key_id.size())) != 1) {
    throw Error(ErrorCode::kIo, "CSPRNG unavailable");
  }
  return key;
}

void write_key_file(const std::filesystem::path& path, const KeyRecord& key) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write key file " + path.string());
    ::chmod(path.c_str(), S_IRUSR | S_IWUSR);
    out.write(kKeyMagic, 4);
    out.write(reinterpret_cast<const char*>(key.key_id.data()), key.key_id.size());
    out.write(reinterpret_cast<const char*>(key.master_key.data()), key.master_key.size());
    if (!out) throw Error(ErrorCode::kIo, "short write to key file " + path.string());
  }
  std::filesystem::permissions(path, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write,
                               std::filesystem::perm_options::replace);
}

KeyRecord read_key_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open key file " + path.string());
  std::array<char, 52> buf{};
  in.read(buf.data(), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size()) || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::kMalformed, "key file " + path.string() + " must be exactly 52 bytes");
  }
  if (std::memcmp(buf.data(), kKeyMagic, 4) != 0) {
    throw Error(ErrorCode::kMalformed, "key file " + path.string() + " has bad magic");
  }
  KeyRecord key;
  std::memcpy(key.key_id.data(), buf.data() + 4, 16);
  std::memcpy(key.master_key.data(), buf.data() + 20, 32);
  return key;
}

Bytes aes256_gcm_seal(std::span<const std::uint8_t> key, std::span<const std::uint8_t> iv,
                      std::span<const std::uint8_t> aad, std::span<const std::uint8_t> plaintext) {
  auto ctx = make_gcm_ctx(key, iv, true);
  int len = 0;
  if (!aad.empty() && EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM AAD update failed");
  }
  Bytes out(plaintext.size() + kTagBytes);
  int written = 0;
  if (!plaintext.empty()) {
    if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(), static_cast<int>(plaintext.size())) != 1) {
      throw Error(ErrorCode::kIo, "AES-GCM encrypt failed");
    }
    written = len;
  }
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &len) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM finalise failed");
  }
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagBytes, out.data() + plaintext.size()) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM tag extraction failed");
  }
  return out;
}

Bytes aes256_gcm_open(std::span<const std::uint8_t> key, std::span<const std::uint8_t> iv,
                      std::span<const std::uint8_t> aad, std::span<const std::uint8_t> sealed) {
  if (sealed.size() < kTagBytes) throw Error(ErrorCode::kAuthFail, "sealed message shorter than tag");
  auto ctx = make_gcm_ctx(key, iv, false);
  const std::size_t body = sealed.size() - kTagBytes;
  int len = 0;
  if (!aad.empty() && EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM AAD update failed");
  }
  Bytes plain(body);
  if (body > 0 && EVP_DecryptUpdate(ctx.get(), plain.data(), &len, sealed.data(), static_cast<int>(body)) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM decrypt failed");
  }
  std::array<std::uint8_t, kTagBytes> tag{};
  std::memcpy(tag.data(), sealed.data() + body, kTagBytes);
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) != 1) {
    throw Error(ErrorCode::kIo, "AES-GCM tag set failed");
  }
  std::array<std::uint8_t, 16> scratch{};
  if (EVP_DecryptFinal_ex(ctx.get(), scratch.data(), &len) != 1) {
    std::fill(plain.begin(), plain.end(), 0);
    throw Error(ErrorCode::kAuthFail, "authentication tag mismatch");
  }
  return plain;
}

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 32> digest{};
  SHA256(data.data(), data.size(), digest.data());
  return digest;
}

std::array<std::uint8_t, 32> hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 32> mac{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), mac.data(), &len) ==
      nullptr) {
    throw Error(ErrorCode::kIo, "HMAC-SHA256 failed");
  }
  return mac;
}

std::array<std::uint8_t, 16> derive_nonce_salt(const KeyRecord& key, std::uint64_t seed) {
  static constexpr std::string_view kLabel = "dsguard/nonce-salt";
  Bytes msg(kLabel.begin(), kLabel.end());
  for (int i = 0; i < 8; ++i) msg.push_back(static_cast<std::uint8_t>(seed >> (8 * i)));
  const auto mac = hmac_sha256(key.master_key, msg);
  std::array<std::uint8_t, 16> salt{};
  std::copy_n(mac.begin(), salt.size(), salt.begin());
  return salt;
}

Nonce derive_nonce(std::span<const std::uint8_t> salt, std::uint64_t index) {
  Bytes msg(salt.begin(), salt.end());
  for (int i = 0; i < 8; ++i) msg.push_back(static_cast<std::uint8_t>(index >> (8 * i)));
  const auto digest = sha256(msg);
  Nonce nonce{};
  std::copy_n(digest.begin(), nonce.size(), nonce.begin());
  return nonce;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(ErrorCode::kMalformed, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::kMalformed, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

}  // namespace dsguard

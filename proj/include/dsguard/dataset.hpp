#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsguard/crypto.hpp"
#include "dsguard/error.hpp"
#include "dsguard/fsp.hpp"
#include "dsguard/image.hpp"
#include "dsguard/rit.hpp"

namespace dsguard {

struct DatasetRecord {
  std::size_t index = 0;
  int label = 0;
  Image image;
  std::string source_name;
};

using Dataset = std::vector<DatasetRecord>;

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// CIFAR-10 binary batch: per record one label byte, then 1024 R, 1024 G,
/// 1024 B bytes (row-major planes).
Dataset load_cifar_binary(const std::filesystem::path& path);
void write_cifar_binary(const std::filesystem::path& path, const Dataset& records);

/// One class per sub-directory; labels follow sorted directory names and
/// records follow sorted paths. Lossy files are rejected with kLossyFormat.
Dataset load_image_dir(const std::filesystem::path& root);

/// Flat layout used for protected and restored datasets:
///   images/NNNNNN.png, labels.txt ("NNNNNN <label>" per line), [manifest.json]
void write_dataset_dir(const std::filesystem::path& dir, const Dataset& records);
Dataset read_dataset_dir(const std::filesystem::path& dir);

/// Loads a clean dataset from a CIFAR binary file, a flat dataset dir, or a
/// class-directory tree, in that order of detection.
Dataset load_dataset(const std::filesystem::path& path);

struct ProtectParams {
  RitParams rit;
  PerturbConfig perturb;
  std::string generator = "fsp";
  int parallelism = 1;

  void validate() const;
};

struct ManifestEntry {
  std::size_t index = 0;
  int label = 0;
  std::string nonce;     // hex
  std::string checksum;  // hex SHA-256 of the protected pixel bytes
  std::string source;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Dataset-level bookkeeping that travels with the protected dataset. Holds
/// no secrets.
struct Manifest {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::string generator;
  RitParams rit;
  PerturbConfig perturb;
  std::string key_id;  // hex
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<ManifestEntry> entries;

  /// SHA-256 over the canonical entry list.
  std::string dataset_checksum() const;
  const ManifestEntry* find(std::size_t index) const;

  /// Canonical text: sorted keys, two-space indent, trailing newline.
  std::string to_text() const;
  /// Verifies the schema version and dataset checksum; throws kMalformed / kChecksum.
  static Manifest from_text(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

std::string image_checksum(const Image& image);

struct ProtectedRecordInfo {
  double psnr_vs_clean = 0.0;
  std::size_t payload_bits = 0;
  std::size_t capacity_bits = 0;
};

struct ProtectResult {
  Dataset records;
  Manifest manifest;
  std::vector<ProtectedRecordInfo> info;  // parallel to records
};

/// Owner path: perturb, pair and transform, encrypt and embed the plan.
/// Output is fully determined by (records, key, params); worker count does
/// not affect any byte.
ProtectResult protect_dataset(const Dataset& records, const KeyRecord& key, const ProtectParams& params);

/// Single-record core of protect_dataset, exposed for bindings and tests.
Image protect_image(const Image& clean, const Image& carrier, const KeyRecord& key, const Nonce& nonce,
                    const RitParams& params);

/// Extract, authenticate, parse, invert. Throws kAuthFail / kMalformed.
/// When `expected_nonce` is set the payload nonce must match it.
Image restore_image(const Image& protected_image, const KeyRecord& key,
                    const std::optional<Nonce>& expected_nonce = std::nullopt);

struct RestoreFailure {
  std::size_t index = 0;
  ErrorCode code = ErrorCode::kAuthFail;
  std::string message;
};

struct RestoreResult {
  Dataset records;
  std::vector<RestoreFailure> failures;
};

/// Authorized-user path. Accepts any subset of the protected records. Records
/// that fail checksum or authentication are reported and skipped; a manifest
/// issued under a different key aborts with kKeyMismatch.
RestoreResult restore_dataset(const Dataset& records, const Manifest& manifest, const KeyRecord& key,
                              int parallelism = 1);

}  // namespace dsguard

#include "dsguard/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <json.hpp>
#include <regex>
#include <set>
#include <sstream>

#include "dsguard/image_io.hpp"
#include "dsguard/prng.hpp"
#include "dsguard/stego.hpp"
#include "parallel.hpp"

namespace dsguard {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPlane = kCifarSide * kCifarSide;

std::string record_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

Error with_record(const Error& e, std::size_t index) {
  return Error(e.code(), "record " + std::to_string(index) + ": " + std::string(e.what()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

Nonce nonce_from_hex(const std::string& hex) {
  const Bytes raw = from_hex(hex);
  if (raw.size() != 12) throw Error(ErrorCode::kMalformed, "manifest nonce must be 12 bytes");
  Nonce n{};
  std::copy(raw.begin(), raw.end(), n.begin());
  return n;
}

}  // namespace

Dataset load_cifar_binary(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error(ErrorCode::kMalformed, path.string() + ": length " + std::to_string(bytes.size()) +
                                           " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  Dataset records;
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  records.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw Error(ErrorCode::kMalformed, path.string() + ": record " + std::to_string(r) + " has label " +
                                             std::to_string(rec[0]) + " > 9");
    }
    Image image(kCifarSide, kCifarSide, 3);
    auto px = image.pixels();
    for (int i = 0; i < kCifarPlane; ++i) {
      for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(i) * 3 + c] = rec[1 + c * kCifarPlane + i];
    }
    records.push_back({r, rec[0], std::move(image), path.filename().string() + "#" + std::to_string(r)});
  }
  return records;
}

void write_cifar_binary(const fs::path& path, const Dataset& records) {
  std::string out;
  out.reserve(records.size() * kCifarRecordBytes);
  for (const auto& rec : records) {
    if (rec.image.height() != kCifarSide || rec.image.width() != kCifarSide || rec.image.channels() != 3) {
      throw Error(ErrorCode::kDimension, "CIFAR container needs 32x32x3 images");
    }
    if (rec.label < 0 || rec.label > 9) throw Error(ErrorCode::kInvalidArgument, "CIFAR labels must be 0..9");
    out.push_back(static_cast<char>(rec.label));
    const auto px = rec.image.pixels();
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < kCifarPlane; ++i) out.push_back(static_cast<char>(px[static_cast<std::size_t>(i) * 3 + c]));
  }
  write_text(path, out);
}

Dataset load_image_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIo, root.string() + " is not a directory");
  std::vector<fs::path> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') classes.push_back(entry.path());
  }
  std::sort(classes.begin(), classes.end());
  Dataset records;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(classes[label])) {
      if (!entry.is_regular_file() || entry.path().filename().string().front() == '.') continue;
      if (is_lossy_extension(entry.path())) {
        throw Error(ErrorCode::kLossyFormat,
                    entry.path().string() + ": lossy format; an LSB payload would not survive re-encoding");
      }
      if (is_supported_image_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      records.push_back({records.size(), static_cast<int>(label), read_image(file),
                         fs::relative(file, root).generic_string()});
    }
  }
  return records;
}

void write_dataset_dir(const fs::path& dir, const Dataset& records) {
  const fs::path images = dir / "images";
  fs::create_directories(images);
  static const std::regex kRecordFile(R"(\d{6,}\.png)");
  for (const auto& entry : fs::directory_iterator(images)) {
    if (std::regex_match(entry.path().filename().string(), kRecordFile)) fs::remove(entry.path());
  }
  std::string labels;
  for (const auto& rec : records) {
    write_png(images / (record_name(rec.index) + ".png"), rec.image);
    labels += record_name(rec.index) + " " + std::to_string(rec.label) + "\n";
  }
  write_text(dir / "labels.txt", labels);
}

Dataset read_dataset_dir(const fs::path& dir) {
  std::istringstream labels(read_text(dir / "labels.txt"));
  Dataset records;
  std::string name;
  int label = 0;
  while (labels >> name >> label) {
    const fs::path file = dir / "images" / (name + ".png");
    if (!fs::exists(file)) continue;
    std::size_t index = 0;
    try {
      index = std::stoull(name);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kMalformed, "labels.txt: bad record name '" + name + "'");
    }
    records.push_back({index, label, read_png(file), "images/" + name + ".png"});
  }
  if (!labels.eof()) throw Error(ErrorCode::kMalformed, (dir / "labels.txt").string() + ": unparseable line");
  return records;
}

Dataset load_dataset(const fs::path& path) {
  if (fs::is_regular_file(path)) return load_cifar_binary(path);
  if (fs::is_directory(path) && fs::exists(path / "labels.txt") && fs::is_directory(path / "images")) {
    return read_dataset_dir(path);
  }
  if (fs::is_directory(path)) return load_image_dir(path);
  throw Error(ErrorCode::kIo, "input path " + path.string() + " does not exist");
}

void ProtectParams::validate() const {
  rit.validate();
  perturb.validate();
  if (generator != "fsp" && generator != "uniform-noise") {
    throw Error(ErrorCode::kInvalidArgument, "unknown generator '" + generator + "' (expected fsp or uniform-noise)");
  }
  if (parallelism < 1) throw Error(ErrorCode::kInvalidArgument, "parallelism must be >= 1");
}

std::string Manifest::dataset_checksum() const {
  std::string canon;
  for (const auto& e : entries) {
    canon += std::to_string(e.index) + " " + std::to_string(e.label) + " " + e.nonce + " " + e.checksum + " " +
             e.source + "\n";
  }
  const auto digest = sha256({reinterpret_cast<const std::uint8_t*>(canon.data()), canon.size()});
  return to_hex(digest);
}

const ManifestEntry* Manifest::find(std::size_t index) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), index,
                             [](const ManifestEntry& e, std::size_t i) { return e.index < i; });
  return it != entries.end() && it->index == index ? &*it : nullptr;
}

std::string Manifest::to_text() const {
  json entries_json = json::array();
  for (const auto& e : entries) {
    entries_json.push_back(
        {{"index", e.index}, {"label", e.label}, {"nonce", e.nonce}, {"checksum", e.checksum}, {"source", e.source}});
  }
  const json doc = {
      {"format_version", format_version},
      {"generator", generator},
      {"key_id", key_id},
      {"geometry", {{"height", height}, {"width", width}, {"channels", channels}}},
      {"params",
       {{"block_size", rit.block_size},
        {"quant_step", rit.quant_step},
        {"epsilon", perturb.epsilon},
        {"step_size", perturb.step_size},
        {"iterations", perturb.iterations},
        {"layer", perturb.layer},
        {"seed", perturb.seed}}},
      {"record_count", entries.size()},
      {"entries", entries_json},
      {"dataset_checksum", dataset_checksum()},
  };
  return doc.dump(2) + "\n";
}

Manifest Manifest::from_text(const std::string& text) {
  Manifest m;
  std::string recorded_checksum;
  try {
    const json doc = json::parse(text);
    m.format_version = doc.at("format_version").get<int>();
    if (m.format_version != kFormatVersion) {
      throw Error(ErrorCode::kMalformed, "unsupported manifest version " + std::to_string(m.format_version));
    }
    m.generator = doc.at("generator").get<std::string>();
    m.key_id = doc.at("key_id").get<std::string>();
    const auto& geo = doc.at("geometry");
    m.height = geo.at("height").get<int>();
    m.width = geo.at("width").get<int>();
    m.channels = geo.at("channels").get<int>();
    const auto& p = doc.at("params");
    m.rit.block_size = p.at("block_size").get<int>();
    m.rit.quant_step = p.at("quant_step").get<int>();
    m.perturb.epsilon = p.at("epsilon").get<double>();
    m.perturb.step_size = p.at("step_size").get<double>();
    m.perturb.iterations = p.at("iterations").get<int>();
    m.perturb.layer = p.at("layer").get<int>();
    m.perturb.seed = p.at("seed").get<std::uint64_t>();
    for (const auto& e : doc.at("entries")) {
      m.entries.push_back({e.at("index").get<std::size_t>(), e.at("label").get<int>(), e.at("nonce").get<std::string>(),
                           e.at("checksum").get<std::string>(), e.at("source").get<std::string>()});
    }
    if (doc.at("record_count").get<std::size_t>() != m.entries.size()) {
      throw Error(ErrorCode::kMalformed, "manifest record_count does not match its entries");
    }
    recorded_checksum = doc.at("dataset_checksum").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformed, std::string("manifest: ") + e.what());
  }
  for (std::size_t i = 1; i < m.entries.size(); ++i) {
    if (m.entries[i - 1].index >= m.entries[i].index) {
      throw Error(ErrorCode::kMalformed, "manifest entries must be strictly increasing by index");
    }
  }
  if (recorded_checksum != m.dataset_checksum()) {
    throw Error(ErrorCode::kChecksum, "manifest dataset checksum does not verify");
  }
  return m;
}

void Manifest::save(const fs::path& path) const { write_text(path, to_text()); }

Manifest Manifest::load(const fs::path& path) { return from_text(read_text(path)); }

std::string image_checksum(const Image& image) { return to_hex(sha256(image.pixels())); }

Image protect_image(const Image& clean, const Image& carrier, const KeyRecord& key, const Nonce& nonce,
                    const RitParams& params) {
  const RitResult rit = build_plan(clean, carrier, params);
  const Bytes plan_bytes = serialize_plan(rit.plan);
  const SequencePayload payload = encrypt_sequence(plan_bytes, key, nonce);
  return lsb_embed(rit.core, payload.encode());
}

Image restore_image(const Image& protected_image, const KeyRecord& key, const std::optional<Nonce>& expected_nonce) {
  const SequencePayload payload = lsb_extract(protected_image);
  if (expected_nonce && payload.nonce != *expected_nonce) {
    throw Error(ErrorCode::kAuthFail, "payload nonce does not match the manifest");
  }
  const Bytes plan_bytes = decrypt_sequence(payload, key);
  return invert_plan(protected_image, parse_plan(plan_bytes));
}

ProtectResult protect_dataset(const Dataset& records, const KeyRecord& key, const ProtectParams& params) {
  params.validate();
  ProtectResult result;
  Manifest& m = result.manifest;
  m.generator = params.generator;
  m.rit = params.rit;
  m.perturb = params.perturb;
  m.key_id = to_hex(key.key_id);
  if (records.empty()) return result;

  const Image& first = records.front().image;
  m.height = first.height();
  m.width = first.width();
  m.channels = first.channels();
  std::vector<int> labels;
  std::set<std::size_t> seen;
  for (const auto& rec : records) {
    if (!rec.image.same_geometry(first)) {
      throw Error(ErrorCode::kDimension, "record " + std::to_string(rec.index) + ": geometry differs from record " +
                                             std::to_string(records.front().index));
    }
    if (!seen.insert(rec.index).second) {
      throw Error(ErrorCode::kInvalidArgument, "record index " + std::to_string(rec.index) + " appears twice");
    }
    labels.push_back(rec.label);
  }
  try {
    if (first.height() % params.rit.block_size != 0 || first.width() % params.rit.block_size != 0) {
      split_blocks(first, params.rit.block_size);  // throws with the offending dimension
    }
    const std::size_t need =
        8 * payload_size_for_plan(serialized_plan_size(first.height() / params.rit.block_size,
                                                       first.width() / params.rit.block_size, first.channels(),
                                                       params.rit.quant_step));
    if (need > lsb_capacity(first)) {
      throw Error(ErrorCode::kCapacityExceeded, "payload needs " + std::to_string(need) + " bits, image holds " +
                                                    std::to_string(lsb_capacity(first)));
    }
  } catch (const Error& e) {
    throw with_record(e, records.front().index);
  }

  const bool multi_class = std::any_of(labels.begin(), labels.end(), [&](int l) { return l != labels.front(); });
  const auto generator = make_generator(params.generator, params.perturb, first.channels());
  const auto salt = derive_nonce_salt(key, params.perturb.seed);

  result.records.resize(records.size());
  result.info.resize(records.size());
  m.entries.resize(records.size());
  detail::parallel_for(records.size(), params.parallelism, [&](std::size_t i) {
    const DatasetRecord& rec = records[i];
    try {
      // Single-class datasets have no cross-class target; fall back to the
      // next record (the record itself for a singleton).
      const std::size_t t = multi_class ? choose_target(labels, i, params.perturb.seed) : (i + 1) % records.size();
      const Image carrier = generator->generate(rec.image, records[t].image, stream_seed(params.perturb.seed, rec.index, 2));
      const Nonce nonce = derive_nonce(salt, rec.index);
      Image protected_image = protect_image(rec.image, carrier, key, nonce, params.rit);
      result.info[i] = {psnr(protected_image, rec.image),
                        8 * payload_size_for_plan(serialized_plan_size(m.height / params.rit.block_size,
                                                                       m.width / params.rit.block_size, m.channels,
                                                                       params.rit.quant_step)),
                        lsb_capacity(protected_image)};
      m.entries[i] = {rec.index, rec.label, to_hex(nonce), image_checksum(protected_image), rec.source_name};
      result.records[i] = {rec.index, rec.label, std::move(protected_image), rec.source_name};
    } catch (const Error& e) {
      throw with_record(e, rec.index);
    }
  });
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.index < b.index; });
  return result;
}

RestoreResult restore_dataset(const Dataset& records, const Manifest& manifest, const KeyRecord& key, int parallelism) {
  if (manifest.key_id != to_hex(key.key_id)) {
    throw Error(ErrorCode::kKeyMismatch, "key " + to_hex(key.key_id) + " does not match manifest key " + manifest.key_id);
  }
  std::vector<std::optional<Image>> restored(records.size());
  std::vector<std::optional<RestoreFailure>> failed(records.size());
  detail::parallel_for(records.size(), parallelism, [&](std::size_t i) {
    const DatasetRecord& rec = records[i];
    try {
      const ManifestEntry* entry = manifest.find(rec.index);
      if (entry == nullptr) throw Error(ErrorCode::kMalformed, "record is not listed in the manifest");
      if (image_checksum(rec.image) != entry->checksum) {
        throw Error(ErrorCode::kChecksum, "protected image checksum does not match the manifest");
      }
      restored[i] = restore_image(rec.image, key, nonce_from_hex(entry->nonce));
    } catch (const Error& e) {
      failed[i] = RestoreFailure{rec.index, e.code(), e.what()};
    }
  });
  RestoreResult result;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (restored[i]) {
      result.records.push_back({records[i].index, records[i].label, std::move(*restored[i]), records[i].source_name});
    } else {
      result.failures.push_back(std::move(*failed[i]));
    }
  }
  return result;
}

}  // namespace dsguard

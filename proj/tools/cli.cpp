#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "dsguard/dataset.hpp"
#include "dsguard/image_io.hpp"
#include "dsguard/stego.hpp"

namespace dsguard::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Thrown for problems the user can fix by changing the command line.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliConfig {
  std::string subcommand;
  std::string input;
  std::string output;
  std::string clean;
  std::string key;
  std::string manifest;
  std::string report;
  std::string generator = "fsp";
  std::string epsilon = "16/255";
  std::string step_size = "2/255";
  std::string container = "png";
  std::vector<std::size_t> indices;
  int block_size = 4;
  int quant_step = 4;
  int iterations = 40;
  int layer = 2;
  std::uint64_t seed = 0;
  int parallelism = 0;
  int sheet_rows = 8;
};

double parse_fraction(const std::string& text, const char* flag) {
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash == std::string::npos) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    }
    const std::string num = text.substr(0, slash);
    const std::string den = text.substr(slash + 1);
    const double n = std::stod(num, &used);
    if (used != num.size()) throw std::invalid_argument(text);
    const double d = std::stod(den, &used);
    if (used != den.size() || d == 0.0) throw std::invalid_argument(text);
    return n / d;
  } catch (const std::exception&) {
    throw UsageError(std::string(flag) + ": expected a number or fraction like 16/255, got '" + text + "'");
  }
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  return static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
}

std::string resolve_key_path(const CliConfig& cfg, bool required) {
  if (!cfg.key.empty()) return cfg.key;
  if (const char* env = std::getenv(kKeyEnv); env != nullptr && *env != '\0') return env;
  if (required) throw UsageError(std::string("a key is required: pass --key or set ") + kKeyEnv);
  return {};
}

ProtectParams protect_params(const CliConfig& cfg) {
  ProtectParams p;
  p.rit.block_size = cfg.block_size;
  p.rit.quant_step = cfg.quant_step;
  p.perturb.epsilon = parse_fraction(cfg.epsilon, "--epsilon");
  p.perturb.step_size = parse_fraction(cfg.step_size, "--step-size");
  if (p.perturb.epsilon > 0.0 && p.perturb.step_size > p.perturb.epsilon) p.perturb.step_size = p.perturb.epsilon;
  p.perturb.iterations = cfg.iterations;
  p.perturb.layer = cfg.layer;
  p.perturb.seed = cfg.seed;
  p.generator = cfg.generator;
  p.parallelism = worker_count(cfg.parallelism);
  try {
    p.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return p;
}

json psnr_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_json(const std::string& path, const json& doc, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << doc.dump(2) << "\n";
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write report " + path);
  f << doc.dump(2) << "\n";
}

void require_exists(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::exists(path)) throw UsageError(std::string(flag) + ": " + path + " does not exist");
}

Dataset filter_indices(Dataset records, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return records;
  const std::set<std::size_t> wanted(indices.begin(), indices.end());
  std::set<std::size_t> found;
  Dataset out;
  for (auto& r : records) {
    if (wanted.count(r.index)) {
      found.insert(r.index);
      out.push_back(std::move(r));
    }
  }
  for (auto i : wanted) {
    if (!found.count(i)) throw Error(ErrorCode::kInvalidArgument, "requested record " + std::to_string(i) + " is not in the dataset");
  }
  return out;
}

fs::path manifest_path(const CliConfig& cfg, const std::string& dataset_dir) {
  return cfg.manifest.empty() ? fs::path(dataset_dir) / "manifest.json" : fs::path(cfg.manifest);
}

int cmd_protect(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  require_exists(cfg.input, "--input");
  if (cfg.output.empty()) throw UsageError("--output is required");
  if (cfg.container != "png" && cfg.container != "cifar") throw UsageError("--container must be png or cifar");
  const ProtectParams params = protect_params(cfg);
  std::string key_path = resolve_key_path(cfg, false);
  if (key_path.empty()) key_path = (fs::path(cfg.output).lexically_normal().string() + ".key");
  if (fs::weakly_canonical(cfg.input) == fs::weakly_canonical(cfg.output)) {
    throw UsageError("--output must differ from --input");
  }

  const Dataset clean = load_dataset(cfg.input);
  const bool key_exists = fs::exists(key_path);
  const KeyRecord key = key_exists ? read_key_file(key_path) : KeyRecord::generate();

  ProtectResult result;
  try {
    result = protect_dataset(clean, key, params);
  } catch (const Error& e) {
    err << "protect failed: " << e.what() << "\n";
    return kExitFailure;
  }

  fs::create_directories(cfg.output);
  if (cfg.container == "cifar") {
    write_cifar_binary(fs::path(cfg.output) / "data_batch.bin", result.records);
  } else {
    write_dataset_dir(cfg.output, result.records);
  }
  result.manifest.save(fs::path(cfg.output) / "manifest.json");
  if (!key_exists) write_key_file(key_path, key);

  std::vector<double> psnrs;
  std::size_t payload_bits = 0;
  std::size_t capacity_bits = 0;
  for (const auto& info : result.info) {
    psnrs.push_back(info.psnr_vs_clean);
    payload_bits = info.payload_bits;
    capacity_bits = info.capacity_bits;
  }
  double mean_psnr = 0.0;
  std::size_t finite = 0;
  for (double v : psnrs) {
    if (!std::isinf(v)) {
      mean_psnr += v;
      ++finite;
    }
  }
  if (finite > 0) mean_psnr /= static_cast<double>(finite);

  out << "protected " << result.records.size() << " records -> " << cfg.output << "\n"
      << "key: " << key_path << (key_exists ? " (existing)" : " (new)") << "\n"
      << "mean PSNR(protected, clean): " << mean_psnr << " dB\n"
      << "payload " << payload_bits << " / " << capacity_bits << " bits (headroom "
      << (capacity_bits - payload_bits) << ")\n";
  if (!cfg.report.empty()) {
    write_json(cfg.report,
               {{"command", "protect"},
                {"record_count", result.records.size()},
                {"mean_psnr_protected_vs_clean", mean_psnr},
                {"median_psnr_protected_vs_clean", psnr_json(median(psnrs))},
                {"payload_bits", payload_bits},
                {"capacity_bits", capacity_bits},
                {"headroom_bits", capacity_bits - payload_bits},
                {"key_id", result.manifest.key_id}},
               out);
  }
  return kExitOk;
}

Dataset load_protected(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "data_batch.bin")) {
    // The CIFAR container carries positional records; indices follow file order.
    return load_cifar_binary(fs::path(dir) / "data_batch.bin");
  }
  return read_dataset_dir(dir);
}

int cmd_restore(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  require_exists(cfg.input, "--input");
  if (cfg.output.empty()) throw UsageError("--output is required");
  const std::string key_path = resolve_key_path(cfg, true);
  require_exists(key_path, "--key");
  const KeyRecord key = read_key_file(key_path);
  const Manifest manifest = Manifest::load(manifest_path(cfg, cfg.input));
  const Dataset protected_records = filter_indices(load_protected(cfg.input), cfg.indices);

  RestoreResult result;
  try {
    result = restore_dataset(protected_records, manifest, key, worker_count(cfg.parallelism));
  } catch (const Error& e) {
    err << "restore aborted: " << e.what() << "\n";
    return kExitFailure;
  }
  for (const auto& f : result.failures) {
    err << "record " << f.index << " failed: " << f.message << "\n";
  }
  if (!result.records.empty()) write_dataset_dir(cfg.output, result.records);
  out << "restored " << result.records.size() << " of " << protected_records.size() << " records";
  if (!result.records.empty()) out << " -> " << cfg.output;
  out << "\n";
  if (!cfg.report.empty()) {
    json failures = json::array();
    for (const auto& f : result.failures) {
      failures.push_back({{"index", f.index}, {"code", std::string(to_string(f.code))}, {"message", f.message}});
    }
    write_json(cfg.report,
               {{"command", "restore"},
                {"requested", protected_records.size()},
                {"restored", result.records.size()},
                {"failures", failures}},
               out);
  }
  return result.failures.empty() ? kExitOk : kExitFailure;
}

Image contact_sheet(const std::vector<std::array<const Image*, 3>>& rows) {
  constexpr int kGap = 2;
  const Image& ref = *rows.front()[0];
  const int h = ref.height();
  const int w = ref.width();
  Image sheet(static_cast<int>(rows.size()) * (h + kGap) + kGap, 3 * (w + kGap) + kGap, ref.channels(), 255);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int col = 0; col < 3; ++col) {
      const Image& img = *rows[r][col];
      const int oy = kGap + static_cast<int>(r) * (h + kGap);
      const int ox = kGap + col * (w + kGap);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < ref.channels(); ++c) sheet.at(oy + y, ox + x, c) = img.at(y, x, c);
    }
  }
  return sheet;
}

int cmd_verify(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  require_exists(cfg.clean, "--clean");
  require_exists(cfg.input, "--input");
  const std::string key_path = resolve_key_path(cfg, true);
  require_exists(key_path, "--key");
  if (cfg.sheet_rows < 0) throw UsageError("--sheet-rows must be >= 0");
  const KeyRecord key = read_key_file(key_path);
  const Manifest manifest = Manifest::load(manifest_path(cfg, cfg.input));
  const Dataset clean = load_dataset(cfg.clean);
  const Dataset protected_records = filter_indices(load_protected(cfg.input), cfg.indices);

  RestoreResult restored;
  try {
    restored = restore_dataset(protected_records, manifest, key, worker_count(cfg.parallelism));
  } catch (const Error& e) {
    err << "verify aborted: " << e.what() << "\n";
    return kExitFailure;
  }

  std::map<std::size_t, const DatasetRecord*> clean_by_index;
  for (const auto& r : clean) clean_by_index[r.index] = &r;
  std::map<std::size_t, const DatasetRecord*> protected_by_index;
  for (const auto& r : protected_records) protected_by_index[r.index] = &r;

  constexpr double kFlagBelowDb = 32.0;
  json flagged = json::array();
  json per_record = json::array();
  std::vector<double> rec_psnr;
  std::vector<double> prot_psnr;
  std::vector<std::array<const Image*, 3>> sheet_rows;
  for (const auto& f : restored.failures) {
    flagged.push_back({{"index", f.index}, {"reason", std::string(to_string(f.code))}});
  }
  for (const auto& r : restored.records) {
    auto it = clean_by_index.find(r.index);
    if (it == clean_by_index.end()) {
      flagged.push_back({{"index", r.index}, {"reason", "no clean record with this index"}});
      continue;
    }
    const Image& c = it->second->image;
    const Image& p = protected_by_index.at(r.index)->image;
    if (!c.same_geometry(r.image)) {
      flagged.push_back({{"index", r.index}, {"reason", "clean/protected geometry mismatch"}});
      continue;
    }
    const double pr = psnr(r.image, c);
    const double pp = psnr(p, c);
    rec_psnr.push_back(pr);
    prot_psnr.push_back(pp);
    per_record.push_back({{"index", r.index}, {"psnr_recovered_vs_clean", psnr_json(pr)},
                          {"psnr_protected_vs_clean", psnr_json(pp)}});
    if (pr < kFlagBelowDb || it->second->label != r.label) {
      flagged.push_back({{"index", r.index},
                         {"reason", it->second->label != r.label ? "label mismatch" : "recovered image does not match clean"}});
    }
    if (static_cast<int>(sheet_rows.size()) < cfg.sheet_rows) sheet_rows.push_back({&c, &p, &r.image});
  }

  const double min_rec = rec_psnr.empty() ? 0.0 : *std::min_element(rec_psnr.begin(), rec_psnr.end());
  json stats = {{"command", "verify"},
                {"record_count", protected_records.size()},
                {"restored", restored.records.size()},
                {"compared", rec_psnr.size()},
                {"median_psnr_recovered_vs_clean", rec_psnr.empty() ? json(nullptr) : psnr_json(median(rec_psnr))},
                {"min_psnr_recovered_vs_clean", rec_psnr.empty() ? json(nullptr) : psnr_json(min_rec)},
                {"median_psnr_protected_vs_clean", prot_psnr.empty() ? json(nullptr) : psnr_json(median(prot_psnr))},
                {"flag_threshold_db", kFlagBelowDb},
                {"flagged", flagged},
                {"records", per_record}};

  if (!cfg.output.empty()) {
    fs::create_directories(cfg.output);
    if (!sheet_rows.empty()) write_png(fs::path(cfg.output) / "triplets.png", contact_sheet(sheet_rows));
    write_json((fs::path(cfg.output) / "stats.json").string(), stats, out);
  }
  if (!cfg.report.empty()) write_json(cfg.report, stats, out);

  out << "verified " << rec_psnr.size() << " records";
  if (!rec_psnr.empty()) {
    out << ": median PSNR(recovered, clean) " << median(rec_psnr) << " dB, min " << min_rec
        << " dB; median PSNR(protected, clean) " << median(prot_psnr) << " dB";
  }
  out << "\n";
  if (!flagged.empty()) {
    err << flagged.size() << " record(s) flagged\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_stats(const CliConfig& cfg, std::ostream& out, std::ostream& /*err*/) {
  require_exists(cfg.input, "--input");
  RitParams rit{cfg.block_size, cfg.quant_step};
  try {
    rit.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const bool is_protected = fs::is_directory(cfg.input) && fs::exists(manifest_path(cfg, cfg.input));
  const Dataset records = is_protected ? load_protected(cfg.input) : load_dataset(cfg.input);

  std::map<int, std::size_t> histogram;
  for (const auto& r : records) ++histogram[r.label];
  json hist = json::object();
  for (auto [label, count] : histogram) hist[std::to_string(label)] = count;
  json doc = {{"command", "stats"}, {"record_count", records.size()}, {"class_histogram", hist}};
  if (!records.empty()) {
    const Image& img = records.front().image;
    doc["geometry"] = {{"height", img.height()}, {"width", img.width()}, {"channels", img.channels()}};
    const std::size_t capacity = lsb_capacity(img);
    doc["capacity_bits"] = capacity;
    if (img.height() % rit.block_size == 0 && img.width() % rit.block_size == 0) {
      const std::size_t payload = 8 * payload_size_for_plan(serialized_plan_size(
                                          img.height() / rit.block_size, img.width() / rit.block_size,
                                          img.channels(), rit.quant_step));
      doc["payload_bits"] = payload;
      doc["fits"] = payload <= capacity;
    } else {
      doc["fits"] = false;
    }
  }
  if (is_protected) {
    const Manifest manifest = Manifest::load(manifest_path(cfg, cfg.input));
    std::size_t mismatched = 0;
    for (const auto& r : records) {
      const ManifestEntry* e = manifest.find(r.index);
      if (e == nullptr || e->checksum != image_checksum(r.image)) ++mismatched;
    }
    doc["manifest"] = {{"entries", manifest.entries.size()},
                       {"key_id", manifest.key_id},
                       {"generator", manifest.generator},
                       {"checksum_mismatches", mismatched}};
  }
  write_json(cfg.report.empty() ? "-" : cfg.report, doc, out);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Protect an image dataset against unauthorized training and restore it with a key.", "dsguard"};
  app.require_subcommand(1);
  CliConfig cfg;

  auto add_protect_flags = [&](CLI::App* sub) {
    sub->add_option("--block-size", cfg.block_size, "block edge in pixels")->capture_default_str();
    sub->add_option("--quant-step", cfg.quant_step, "mean-shift quantisation step (power of two, 1..16)")
        ->capture_default_str();
  };
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--key", cfg.key, std::string("key file (default: $") + kKeyEnv + ")");
    sub->add_option("--parallelism,-j", cfg.parallelism, "worker threads (0 = all cores)")->capture_default_str();
    sub->add_option("--report", cfg.report, "write machine-readable stats to this path");
  };

  auto* protect = app.add_subcommand("protect", "transform a clean dataset into a protected one");
  protect->add_option("--input,-i", cfg.input, "CIFAR binary file, dataset dir, or class-directory tree");
  protect->add_option("--output,-o", cfg.output, "output directory");
  add_common(protect);
  add_protect_flags(protect);
  protect->add_option("--epsilon", cfg.epsilon, "L-inf budget in [0,1]; fractions like 16/255 accepted")
      ->capture_default_str();
  protect->add_option("--step-size", cfg.step_size, "attack step in [0,epsilon]")->capture_default_str();
  protect->add_option("--iterations", cfg.iterations, "attack iterations")->capture_default_str();
  protect->add_option("--layer", cfg.layer, "feature layer (1 or 2)")->capture_default_str();
  protect->add_option("--generator", cfg.generator, "fsp or uniform-noise")->capture_default_str();
  protect->add_option("--seed", cfg.seed, "seed for extractor weights and target choice")->capture_default_str();
  protect->add_option("--container", cfg.container, "png or cifar")->capture_default_str();

  auto* restore = app.add_subcommand("restore", "recover clean images from a protected dataset");
  restore->add_option("--input,-i", cfg.input, "protected dataset directory");
  restore->add_option("--output,-o", cfg.output, "output directory for recovered images");
  restore->add_option("--manifest", cfg.manifest, "manifest path (default: <input>/manifest.json)");
  restore->add_option("--indices", cfg.indices, "restore only these record indices")->delimiter(',');
  add_common(restore);

  auto* verify = app.add_subcommand("verify", "restore in memory and report fidelity against the clean data");
  verify->add_option("--clean", cfg.clean, "clean dataset");
  verify->add_option("--input,-i", cfg.input, "protected dataset directory");
  verify->add_option("--output,-o", cfg.output, "directory for triplets.png and stats.json");
  verify->add_option("--manifest", cfg.manifest, "manifest path (default: <input>/manifest.json)");
  verify->add_option("--indices", cfg.indices, "verify only these record indices")->delimiter(',');
  verify->add_option("--sheet-rows", cfg.sheet_rows, "triplet rows in the contact sheet")->capture_default_str();
  add_common(verify);

  auto* stats = app.add_subcommand("stats", "summarise a dataset and its payload capacity");
  stats->add_option("--input,-i", cfg.input, "dataset (clean or protected)");
  stats->add_option("--manifest", cfg.manifest, "manifest path (default: <input>/manifest.json)");
  stats->add_option("--report", cfg.report, "write the JSON here instead of stdout");
  add_protect_flags(stats);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (protect->parsed()) return cmd_protect(cfg, out, err);
    if (restore->parsed()) return cmd_restore(cfg, out, err);
    if (verify->parsed()) return cmd_verify(cfg, out, err);
    return cmd_stats(cfg, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace dsguard::cli

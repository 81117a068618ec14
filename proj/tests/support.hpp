#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "dsguard/dataset.hpp"
#include "dsguard/image.hpp"

namespace testing_support {

inline dsguard::Image random_image(std::mt19937_64& rng, int h, int w, int c, int lo = 0, int hi = 255) {
  dsguard::Image img(h, w, c);
  std::uniform_int_distribution<int> d(lo, hi);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

/// Smooth, natural-ish image: low-frequency gradients plus mild noise.
inline dsguard::Image smooth_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 6.0);
  dsguard::Image img(h, w, c);
  for (int ch = 0; ch < c; ++ch) {
    const double base = 40 + 170 * u(rng);
    const double ax = (u(rng) - 0.5) * 160.0 / w;
    const double ay = (u(rng) - 0.5) * 160.0 / h;
    const double fx = 0.05 + 0.3 * u(rng);
    const double amp = 40 * u(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = base + ax * x + ay * y + amp * std::sin(fx * (x + 2 * y)) + noise(rng);
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  }
  return img;
}

/// Balanced labelled dataset of smooth images.
inline dsguard::Dataset synthetic_dataset(std::uint64_t seed, std::size_t count, int classes, int h = 32, int w = 32,
                                          int c = 3) {
  std::mt19937_64 rng(seed);
  dsguard::Dataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    ds.push_back({i, static_cast<int>(i % classes), smooth_image(rng, h, w, c), "synthetic#" + std::to_string(i)});
  }
  return ds;
}

class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dsguard_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support

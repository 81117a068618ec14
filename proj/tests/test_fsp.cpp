#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "dsguard/error.hpp"
#include "dsguard/fsp.hpp"
#include "oracles/reference.hpp"
#include "support.hpp"

using namespace dsguard;
using testing_support::random_image;
using testing_support::smooth_image;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int c, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

int max_abs_diff(const Image& a, const Image& b) {
  int m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
  return m;
}

}  // namespace

TEST_CASE("extractor weights are a pure function of the seed") {
  const FeatureExtractor a(42);
  const FeatureExtractor b(42);
  const FeatureExtractor c(43);
  CHECK(a.conv1().weights == b.conv1().weights);
  CHECK(a.conv2().weights == b.conv2().weights);
  CHECK(a.conv1().weights != c.conv1().weights);
  CHECK(a.conv1().weights.size() == 8 * 3 * 9);
  CHECK(a.conv2().weights.size() == 16 * 8 * 9);
  const double limit1 = std::sqrt(6.0 / 27.0);
  for (double w : a.conv1().weights) CHECK(std::abs(w) <= limit1);
  // SplitMix64(42) first output 0xbdd732262feb6e95 -> first weight
  const double u0 = static_cast<double>(0xbdd732262feb6e95ULL >> 11) * 0x1.0p-53;
  CHECK(a.conv1().weights[0] == doctest::Approx((2 * u0 - 1) * limit1).epsilon(1e-15));
}

TEST_CASE("zero input with zero biases gives zero features") {
  const FeatureExtractor fe(42);
  const Tensor zero(3, 8, 8);
  for (int layer : {1, 2}) {
    const Tensor f = extract_features(zero, fe, layer);
    CHECK(std::all_of(f.data.begin(), f.data.end(), [](double v) { return v == 0.0; }));
  }
  CHECK(extract_features(zero, fe, 2).channels == 16);
  CHECK(extract_features(zero, fe, 2).height == 4);
  CHECK(extract_features(zero, fe, 1).height == 8);
}

TEST_CASE("convolution is linear before the activation") {
  std::mt19937_64 rng(51);
  FeatureExtractor fe(7);
  const Tensor x = random_tensor(rng, 3, 8, 8);
  Tensor x2 = x;
  for (auto& v : x2.data) v *= 2.0;
  const Tensor a = fe.conv1().forward(x);
  const Tensor b = fe.conv1().forward(x2);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(b.data[i] == doctest::Approx(2 * a.data[i]).epsilon(1e-12));
}

TEST_CASE("features match an independent forward pass (seed 42, 8x8x3)") {
  std::mt19937_64 rng(52);
  const FeatureExtractor fe(42);
  for (int t = 0; t < 10; ++t) {
    const Image img = random_image(rng, 8, 8, 3);
    for (int layer : {1, 2}) {
      int fh = 0, fw = 0;
      const auto ref = oracle::features(oracle::to_hwc(img), 8, 8, 3, fe, layer, fh, fw);
      const auto got = oracle::tensor_to_hwc(extract_features(to_tensor(img), fe, layer));
      REQUIRE(got.size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::abs(got[i] - ref[i]) <= 1e-6 * std::max(1.0, std::abs(ref[i])));
      }
    }
  }
}

TEST_CASE("fsp_loss: zero at the target, non-negative, matches oracle") {
  std::mt19937_64 rng(53);
  const FeatureExtractor fe(3);
  for (int t = 0; t < 20; ++t) {
    const Image a = random_image(rng, 8, 8, 3);
    const Image b = random_image(rng, 8, 8, 3);
    const Tensor target = extract_features(to_tensor(b), fe, 2);
    CHECK(fsp_loss(to_tensor(b), target, fe, 2) == 0.0);
    const double loss = fsp_loss(to_tensor(a), target, fe, 2);
    CHECK(loss >= 0.0);
    int fh = 0, fw = 0;
    const double ref = oracle::squared_distance(oracle::features(oracle::to_hwc(a), 8, 8, 3, fe, 2, fh, fw),
                                                oracle::features(oracle::to_hwc(b), 8, 8, 3, fe, 2, fh, fw));
    CHECK(loss == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("fsp_gradient: stationary at zero loss") {
  std::mt19937_64 rng(54);
  const FeatureExtractor fe(5);
  const Tensor x = random_tensor(rng, 3, 8, 8);
  const Tensor g = fsp_gradient(x, extract_features(x, fe, 2), fe, 2);
  CHECK(std::all_of(g.data.begin(), g.data.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("fsp_gradient agrees with central finite differences") {
  std::mt19937_64 rng(55);
  for (int layer : {1, 2}) {
    for (int t = 0; t < 5; ++t) {
      const FeatureExtractor fe(100 + t);
      const Tensor x = random_tensor(rng, 3, 8, 8);
      const Tensor target = extract_features(random_tensor(rng, 3, 8, 8), fe, layer);
      const auto r = oracle::gradient_check(x, target, fsp_gradient(x, target, fe, layer), fe, layer);
      CHECK(r.checked > 100);
      CHECK(r.max_rel_error <= 1e-4);
      CHECK(r.max_rel_error_kink <= 1e-4);
    }
  }
}

TEST_CASE("fsp_gradient is zero through dead activations") {
  std::mt19937_64 rng(56);
  FeatureExtractor fe(9);
  for (auto& b : fe.conv1().bias) b = -100.0;  // every first-layer unit is dead on [0,1] inputs
  const Tensor x = random_tensor(rng, 3, 8, 8);
  Tensor target(16, 4, 4, 1.0);
  const Tensor g = fsp_gradient(x, target, fe, 2);
  CHECK(std::all_of(g.data.begin(), g.data.end(), [](double v) { return v == 0.0; }));
  CHECK(fsp_loss(x, target, fe, 2) > 0.0);
}

TEST_CASE("extractor rejects wrong channel counts and layers") {
  const FeatureExtractor fe(1);
  CHECK_THROWS_AS(extract_features(Tensor(1, 8, 8), fe, 2), Error);
  CHECK_THROWS_AS(extract_features(Tensor(3, 8, 8), fe, 3), Error);
  CHECK_THROWS_AS(FeatureExtractor(1, 2), Error);
}

TEST_CASE("fsp_perturb degenerate cases") {
  std::mt19937_64 rng(57);
  const FeatureExtractor fe(0);
  const Image clean = smooth_image(rng, 32, 32, 3);
  const Image target = smooth_image(rng, 32, 32, 3);
  PerturbConfig cfg;
  cfg.epsilon = 0.0;
  CHECK(fsp_perturb(clean, target, fe, cfg) == clean);
  cfg = PerturbConfig{};
  const auto same = fsp_attack(clean, clean, fe, cfg);
  CHECK(same.initial_loss == 0.0);
  CHECK(same.carrier == clean);
  CHECK_THROWS_AS(fsp_perturb(clean, Image(16, 16, 3), fe, cfg), Error);
  cfg.epsilon = 1.5;
  CHECK_THROWS_AS(fsp_perturb(clean, target, fe, cfg), Error);
}

TEST_CASE("fsp_perturb respects the budget, is deterministic and never worsens the loss") {
  std::mt19937_64 rng(58);
  const FeatureExtractor fe(0);
  for (double eps : {4.0 / 255, 8.0 / 255, 16.0 / 255, 0.1}) {
    PerturbConfig cfg;
    cfg.epsilon = eps;
    cfg.step_size = std::min(cfg.step_size, eps);
    cfg.iterations = 10;
    const Image clean = random_image(rng, 16, 16, 3);
    const Image target = random_image(rng, 16, 16, 3);
    const auto r = fsp_attack(clean, target, fe, cfg);
    CHECK(max_abs_diff(r.carrier, clean) <= std::lround(eps * 255));
    CHECK(r.final_loss <= r.initial_loss);
    CHECK(fsp_attack(clean, target, fe, cfg).carrier == r.carrier);
  }
}

// Pilot run (seed 100, 20 smooth 32x32x3 pairs, defaults): final/initial loss
// ratios were 0.35 .. 0.68 with mean 0.527; 400 steps of 0.25/255 gave the
// same mean (0.526), so the ratio is bounded by the 16/255 budget, not by the
// optimiser. The frozen threshold sits above the observed worst case.
TEST_CASE("fsp_perturb reduces the feature loss on CIFAR-shaped pairs") {
  std::mt19937_64 rng(100);
  const FeatureExtractor fe(0);
  const PerturbConfig cfg;
  int reduced = 0;
  int halved = 0;
  for (int i = 0; i < 20; ++i) {
    const Image a = smooth_image(rng, 32, 32, 3);
    const Image b = smooth_image(rng, 32, 32, 3);
    const auto r = fsp_attack(a, b, fe, cfg);
    reduced += r.final_loss <= 0.7 * r.initial_loss;
    halved += r.final_loss <= 0.5 * r.initial_loss;
  }
  CHECK(reduced >= 16);
  MESSAGE("pairs at <= 0.7x initial loss: " << reduced << "/20, at <= 0.5x: " << halved << "/20");
}

TEST_CASE("default attack is close to the budget-limited optimum") {
  std::mt19937_64 rng(59);
  const FeatureExtractor fe(0);
  PerturbConfig fine;
  fine.iterations = 320;
  fine.step_size = 0.25 / 255;
  for (int i = 0; i < 3; ++i) {
    const Image a = smooth_image(rng, 32, 32, 3);
    const Image b = smooth_image(rng, 32, 32, 3);
    const double coarse = fsp_attack(a, b, fe, PerturbConfig{}).final_loss;
    const double best = fsp_attack(a, b, fe, fine).final_loss;
    CHECK(coarse <= 1.05 * best);
  }
}

TEST_CASE("choose_target picks another class deterministically") {
  const std::vector<int> labels{0, 0, 1, 1, 0, 1};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const std::size_t t = choose_target(labels, i, seed);
      CHECK(labels[t] != labels[i]);
      CHECK(choose_target(labels, i, seed) == t);
    }
  }
  const std::vector<int> single{3, 3, 3};
  CHECK_THROWS_AS(choose_target(single, 0, 0), Error);
  CHECK_THROWS_AS(choose_target(labels, 99, 0), Error);
}

TEST_CASE("choose_target is uniform over the other classes") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 10);
  std::map<int, int> hist;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) ++hist[labels[choose_target(labels, 0, static_cast<std::uint64_t>(s))]];
  CHECK(hist.count(0) == 0);
  CHECK(hist.size() == 9);
  const double expected = draws / 9.0;
  double chi2 = 0.0;
  for (auto [label, count] : hist) chi2 += (count - expected) * (count - expected) / expected;
  // 8 degrees of freedom, p = 0.001
  CHECK(chi2 < 26.12);
}

TEST_CASE("uniform-noise generator stays in budget and is seeded") {
  std::mt19937_64 rng(60);
  const Image clean = random_image(rng, 32, 32, 3);
  const UniformNoiseGenerator gen(16.0 / 255);
  const Image a = gen.generate(clean, clean, 1);
  CHECK(max_abs_diff(a, clean) <= 16);
  CHECK(a != clean);
  CHECK(gen.generate(clean, clean, 1) == a);
  CHECK(gen.generate(clean, clean, 2) != a);
  CHECK(UniformNoiseGenerator(0.0).generate(clean, clean, 1) == clean);
  PerturbConfig cfg;
  CHECK(make_generator("fsp", cfg, 3)->name() == "fsp");
  CHECK(make_generator("uniform-noise", cfg, 3)->name() == "uniform-noise");
  CHECK_THROWS_AS(make_generator("pgd", cfg, 3), Error);
}

TEST_CASE("greyscale images use a single-channel extractor") {
  std::mt19937_64 rng(61);
  const FeatureExtractor fe(0, 1);
  const Image clean = smooth_image(rng, 16, 16, 1);
  const Image target = smooth_image(rng, 16, 16, 1);
  const auto r = fsp_attack(clean, target, fe, PerturbConfig{});
  CHECK(r.final_loss <= r.initial_loss);
  CHECK(max_abs_diff(r.carrier, clean) <= 16);
}

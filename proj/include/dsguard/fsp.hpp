#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dsguard/image.hpp"

namespace dsguard {

/// Dense CHW tensor of doubles.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool same_shape(const Tensor& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

/// HWC uint8 -> CHW in [0, 1].
Tensor to_tensor(const Image& image);
/// CHW in [0, 1] -> HWC uint8, rounding to nearest.
Image to_image(const Tensor& t);

/// 3x3 convolution, zero padding 1. Weights are [out][in][ky][kx].
struct Conv3x3 {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  double& w(int o, int i, int ky, int kx) { return weights[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx]; }
  double w(int o, int i, int ky, int kx) const { return weights[((static_cast<std::size_t>(o) * in_channels + i) * 3 + ky) * 3 + kx]; }

  Tensor forward(const Tensor& x) const;
  /// Gradient w.r.t. the input, given the gradient w.r.t. the output.
  Tensor backward_input(const Tensor& grad_out, int in_height, int in_width) const;
};

/// conv(in->8, stride 1) -> ReLU -> conv(8->16, stride 2) -> ReLU.
/// Weights are He-uniform draws from SplitMix64(seed), conv1 then conv2, in
/// weight-index order; biases start at zero.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed, int in_channels = 3);

  int in_channels() const { return conv1_.in_channels; }
  std::uint64_t seed() const { return seed_; }
  const Conv3x3& conv1() const { return conv1_; }
  const Conv3x3& conv2() const { return conv2_; }
  Conv3x3& conv1() { return conv1_; }
  Conv3x3& conv2() { return conv2_; }

  struct Trace {
    Tensor pre1, act1, pre2, act2;
  };
  Trace trace(const Tensor& x) const;

 private:
  std::uint64_t seed_;
  Conv3x3 conv1_;
  Conv3x3 conv2_;
};

Tensor extract_features(const Tensor& x, const FeatureExtractor& fe, int layer);

double fsp_loss(const Tensor& x, const Tensor& target_features, const FeatureExtractor& fe, int layer);

struct LossAndGradient {
  double loss = 0.0;
  Tensor gradient;
};
LossAndGradient fsp_loss_and_gradient(const Tensor& x, const Tensor& target_features, const FeatureExtractor& fe,
                                      int layer);
Tensor fsp_gradient(const Tensor& x, const Tensor& target_features, const FeatureExtractor& fe, int layer);

struct PerturbConfig {
  double epsilon = 16.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int iterations = 40;
  int layer = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PerturbResult {
  Image carrier;
  double initial_loss = 0.0;
  double final_loss = 0.0;  // loss of the returned (8-bit) carrier
};

/// Signed-gradient descent on the feature distance to `target`, projected to
/// the L-inf ball around `clean` and to [0, 1]; keeps the best iterate.
PerturbResult fsp_attack(const Image& clean, const Image& target, const FeatureExtractor& fe, const PerturbConfig& cfg);
Image fsp_perturb(const Image& clean, const Image& target, const FeatureExtractor& fe, const PerturbConfig& cfg);

/// Picks a target record uniformly among those whose label differs from
/// labels[index]. Deterministic in (labels, index, seed).
std::size_t choose_target(std::span<const int> labels, std::size_t index, std::uint64_t seed);

/// Produces the carrier image that the protected image is made to resemble.
class PerturbationGenerator {
 public:
  virtual ~PerturbationGenerator() = default;
  virtual std::string name() const = 0;
  virtual Image generate(const Image& clean, const Image& target, std::uint64_t record_seed) const = 0;
};

class FspGenerator final : public PerturbationGenerator {
 public:
  explicit FspGenerator(PerturbConfig cfg, int in_channels = 3);
  std::string name() const override { return "fsp"; }
  Image generate(const Image& clean, const Image& target, std::uint64_t record_seed) const override;
  const PerturbConfig& config() const { return cfg_; }

 private:
  PerturbConfig cfg_;
  FeatureExtractor fe_;
};

/// Baseline: independent uniform integer noise in [-round(eps*255), +round(eps*255)].
class UniformNoiseGenerator final : public PerturbationGenerator {
 public:
  explicit UniformNoiseGenerator(double epsilon) : epsilon_(epsilon) {}
  std::string name() const override { return "uniform-noise"; }
  Image generate(const Image& clean, const Image& target, std::uint64_t record_seed) const override;

 private:
  double epsilon_;
};

std::unique_ptr<PerturbationGenerator> make_generator(const std::string& name, const PerturbConfig& cfg,
                                                      int in_channels);

}  // namespace dsguard

#include "dsguard/fsp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dsguard/error.hpp"
#include "dsguard/prng.hpp"

namespace dsguard {
namespace {

Conv3x3 make_conv(int in_channels, int out_channels, int stride, SplitMix64& rng) {
  Conv3x3 conv;
  conv.in_channels = in_channels;
  conv.out_channels = out_channels;
  conv.stride = stride;
  conv.weights.resize(static_cast<std::size_t>(out_channels) * in_channels * 9);
  conv.bias.assign(out_channels, 0.0);
  const double limit = std::sqrt(6.0 / (in_channels * 9.0));
  for (auto& w : conv.weights) w = (2.0 * rng.uniform() - 1.0) * limit;
  return conv;
}

Tensor relu(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

void check_layer(int layer) {
  if (layer != 1 && layer != 2) throw Error(ErrorCode::kInvalidArgument, "feature layer must be 1 or 2");
}

int budget_levels(double epsilon) { return static_cast<int>(std::lround(epsilon * 255.0)); }

}  // namespace

Tensor to_tensor(const Image& image) {
  Tensor t(image.channels(), image.height(), image.width());
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) t.at(c, y, x) = image.at(y, x, c) / 255.0;
  return t;
}

Image to_image(const Tensor& t) {
  Image image(t.height, t.width, t.channels);
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x)
      for (int c = 0; c < t.channels; ++c)
        image.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(t.at(c, y, x) * 255.0), 0L, 255L));
  return image;
}

Tensor Conv3x3::forward(const Tensor& x) const {
  if (x.channels != in_channels) {
    throw Error(ErrorCode::kDimension, "conv expects " + std::to_string(in_channels) + " input channels, got " +
                                           std::to_string(x.channels));
  }
  const int oh = (x.height - 1) / stride + 1;
  const int ow = (x.width - 1) / stride + 1;
  Tensor out(out_channels, oh, ow);
  for (int o = 0; o < out_channels; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias[o];
        for (int i = 0; i < in_channels; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= x.width) continue;
              acc += w(o, i, ky, kx) * x.at(i, iy, ix);
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor Conv3x3::backward_input(const Tensor& grad_out, int in_height, int in_width) const {
  Tensor gx(in_channels, in_height, in_width);
  for (int o = 0; o < out_channels; ++o) {
    for (int oy = 0; oy < grad_out.height; ++oy) {
      for (int ox = 0; ox < grad_out.width; ++ox) {
        const double g = grad_out.at(o, oy, ox);
        if (g == 0.0) continue;
        for (int i = 0; i < in_channels; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= in_height) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= in_width) continue;
              gx.at(i, iy, ix) += w(o, i, ky, kx) * g;
            }
          }
        }
      }
    }
  }
  return gx;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed, int in_channels) : seed_(seed) {
  if (in_channels != 1 && in_channels != 3) {
    throw Error(ErrorCode::kInvalidArgument, "feature extractor input must have 1 or 3 channels");
  }
  SplitMix64 rng(seed);
  conv1_ = make_conv(in_channels, 8, 1, rng);
  conv2_ = make_conv(8, 16, 2, rng);
}

FeatureExtractor::Trace FeatureExtractor::trace(const Tensor& x) const {
  Trace t;
  t.pre1 = conv1_.forward(x);
  t.act1 = relu(t.pre1);
  t.pre2 = conv2_.forward(t.act1);
  t.act2 = relu(t.pre2);
  return t;
}

Tensor extract_features(const Tensor& x, const FeatureExtractor& fe, int layer) {
  check_layer(layer);
  auto t = fe.trace(x);
  return layer == 1 ? std::move(t.act1) : std::move(t.act2);
}

double fsp_loss(const Tensor& x, const Tensor& target_features, const FeatureExtractor& fe, int layer) {
  const Tensor f = extract_features(x, fe, layer);
  if (!f.same_shape(target_features)) throw Error(ErrorCode::kDimension, "target feature shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const double d = f.data[i] - target_features.data[i];
    loss += d * d;
  }
  return loss;
}

LossAndGradient fsp_loss_and_gradient(const Tensor& x, const Tensor& target_features, const FeatureExtractor& fe,
                                      int layer) {
  check_layer(layer);
  const auto t = fe.trace(x);
  const Tensor& f = layer == 1 ? t.act1 : t.act2;
  if (!f.same_shape(target_features)) throw Error(ErrorCode::kDimension, "target feature shape mismatch");

  LossAndGradient out;
  // dL/dpre = 2 (f - target) where pre > 0, else 0
  const Tensor& pre = layer == 1 ? t.pre1 : t.pre2;
  Tensor grad_pre(f.channels, f.height, f.width);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const double d = f.data[i] - target_features.data[i];
    out.loss += d * d;
    grad_pre.data[i] = pre.data[i] > 0.0 ? 2.0 * d : 0.0;
  }
  if (layer == 2) {
    Tensor grad_act1 = fe.conv2().backward_input(grad_pre, t.act1.height, t.act1.width);
    for (std::size_t i = 0; i < grad_act1.data.size(); ++i) {
      if (!(t.pre1.data[i] > 0.0)) grad_act1.data[i] = 0.0;
    }
    grad_pre = std::move(grad_act1);
  }
  out.gradient = fe.conv1().backward_input(grad_pre, x.height, x.width);
  return out;
}

Tensor fsp_gradient(const Tensor& x, const Tensor& target_features, const FeatureExtractor& fe, int layer) {
  return fsp_loss_and_gradient(x, target_features, fe, layer).gradient;
}

void PerturbConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be in [0, 1], got " + std::to_string(epsilon));
  }
  if (!(step_size >= 0.0 && step_size <= epsilon) && !(epsilon == 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "step_size must be in [0, epsilon]");
  }
  if (iterations < 0) throw Error(ErrorCode::kInvalidArgument, "iterations must be >= 0");
  check_layer(layer);
}

PerturbResult fsp_attack(const Image& clean, const Image& target, const FeatureExtractor& fe, const PerturbConfig& cfg) {
  cfg.validate();
  if (!clean.same_geometry(target)) throw Error(ErrorCode::kDimension, "clean and target images differ in geometry");
  if (clean.channels() != fe.in_channels()) {
    throw Error(ErrorCode::kDimension, "image channels do not match the feature extractor");
  }
  const Tensor x0 = to_tensor(clean);
  const Tensor target_features = extract_features(to_tensor(target), fe, cfg.layer);

  Tensor x = x0;
  Tensor best = x0;
  double best_loss = 0.0;
  double initial_loss = 0.0;
  for (int it = 0; it <= cfg.iterations; ++it) {
    auto lg = fsp_loss_and_gradient(x, target_features, fe, cfg.layer);
    if (it == 0) {
      initial_loss = best_loss = lg.loss;
    } else if (lg.loss < best_loss) {
      best_loss = lg.loss;
      best = x;
    }
    if (it == cfg.iterations || lg.loss == 0.0) break;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      const double g = lg.gradient.data[i];
      const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      double v = x.data[i] - cfg.step_size * s;
      v = std::clamp(v, x0.data[i] - cfg.epsilon, x0.data[i] + cfg.epsilon);
      x.data[i] = std::clamp(v, 0.0, 1.0);
    }
  }

  PerturbResult result;
  result.initial_loss = initial_loss;
  result.carrier = to_image(best);
  const int budget = budget_levels(cfg.epsilon);
  auto out = result.carrier.pixels();
  const auto src = clean.pixels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp<int>(out[i], src[i] - budget, src[i] + budget));
  }
  result.final_loss = fsp_loss(to_tensor(result.carrier), target_features, fe, cfg.layer);
  if (result.final_loss > initial_loss) {
    // 8-bit re-quantisation undid the gain; the clean image is the best we have.
    result.carrier = clean;
    result.final_loss = initial_loss;
  }
  return result;
}

Image fsp_perturb(const Image& clean, const Image& target, const FeatureExtractor& fe, const PerturbConfig& cfg) {
  return fsp_attack(clean, target, fe, cfg).carrier;
}

std::size_t choose_target(std::span<const int> labels, std::size_t index, std::uint64_t seed) {
  if (index >= labels.size()) throw Error(ErrorCode::kInvalidArgument, "record index out of range");
  const int own = labels[index];
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != own) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "target selection needs at least two classes in the dataset");
  }
  SplitMix64 rng(stream_seed(seed, index, 1));
  return candidates[rng.below(candidates.size())];
}

FspGenerator::FspGenerator(PerturbConfig cfg, int in_channels) : cfg_(cfg), fe_(cfg.seed, in_channels) {
  cfg_.validate();
}

Image FspGenerator::generate(const Image& clean, const Image& target, std::uint64_t /*record_seed*/) const {
  return fsp_perturb(clean, target, fe_, cfg_);
}

Image UniformNoiseGenerator::generate(const Image& clean, const Image& /*target*/, std::uint64_t record_seed) const {
  const int budget = budget_levels(epsilon_);
  Image out = clean;
  if (budget == 0) return out;
  SplitMix64 rng(record_seed);
  for (auto& v : out.pixels()) {
    const int noise = static_cast<int>(rng.below(2 * budget + 1)) - budget;
    v = static_cast<std::uint8_t>(std::clamp(v + noise, 0, 255));
  }
  return out;
}

std::unique_ptr<PerturbationGenerator> make_generator(const std::string& name, const PerturbConfig& cfg,
                                                      int in_channels) {
  if (name == "fsp") return std::make_unique<FspGenerator>(cfg, in_channels);
  if (name == "uniform-noise") {
    cfg.validate();
    return std::make_unique<UniformNoiseGenerator>(cfg.epsilon);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown generator '" + name + "' (expected fsp or uniform-noise)");
}

}  // namespace dsguard

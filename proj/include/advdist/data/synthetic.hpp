#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

/// How high-confidence errors are planted in a synthetic benchmark.
enum class Mechanism { none, bias, shift, overfit };

inline std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::bias:
      return "bias";
    case Mechanism::shift:
      return "shift";
    case Mechanism::overfit:
      return "overfit";
    default:
      return "none";
  }
}

inline Mechanism parse_mechanism(const std::string& s) {
  if (s == "none") return Mechanism::none;
  if (s == "bias") return Mechanism::bias;
  if (s == "shift") return Mechanism::shift;
  if (s == "overfit") return Mechanism::overfit;
  throw ValidationError("unknown mechanism '" + s + "' (expected none, bias, shift or overfit)");
}

struct SyntheticSpec {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_eval = 2000;
  std::size_t image_side = 16;
  Mechanism mechanism = Mechanism::none;
  /// Fraction of low-brightness class-0 images dropped from train (bias only).
  double bias_fraction = 1.0;
  double noise_sd = 0.25;
  /// Multiplier applied to every eval pixel (shift only).
  double shift_factor = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_train == 0 || n_val == 0 || n_eval == 0) throw ValidationError("synthetic split sizes must be positive");
    if (image_side < 4) throw ValidationError("image_side must be at least 4");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw ValidationError("noise_sd must be finite and >= 0");
    if (!(bias_fraction >= 0.0 && bias_fraction <= 1.0)) throw ValidationError("bias_fraction must lie in [0,1]");
    if (!(shift_factor > 0.0 && shift_factor <= 1.0)) throw ValidationError("shift_factor must lie in (0,1]");
  }
};

inline constexpr double kHighBrightness = 1.0;
inline constexpr double kLowBrightness = 0.45;
/// Epoch multiplier the trainer applies when a benchmark asks to be over-trained.
inline constexpr std::size_t kOverfitEpochFactor = 3;

struct SyntheticBenchmark {
  Dataset train;
  Dataset val;
  Dataset eval;
  /// Brightness attribute per image (true = high), aligned with each split.
  std::vector<bool> train_bright;
  std::vector<bool> val_bright;
  std::vector<bool> eval_bright;
  /// Set for Mechanism::overfit; read by the trainer.
  bool overtrain = false;
};

namespace detail {

struct SplitDraw {
  Dataset data;
  std::vector<bool> bright;
};

// Two-class images: a Gaussian blob in the top (class 0) or bottom (class 1)
// half, scaled by the brightness attribute, plus clipped Gaussian noise.
inline SplitDraw draw_split(std::size_t n, const SyntheticSpec& spec, std::uint64_t stream) {
  Rng rng(derive_seed(spec.seed, stream));
  const auto side = static_cast<double>(spec.image_side);
  const double sigma = side / 6.4;
  const ImageShape shape{spec.image_side, spec.image_side, 1};
  std::normal_distribution<double> noise(0.0, 1.0);

  SplitDraw out;
  out.data.images.reserve(n);
  std::vector<Label> labels;
  labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Label label = uniform01(rng) < 0.5 ? 0 : 1;
    const bool bright = uniform01(rng) < 0.5;
    const double row = (label == 0 ? side * 0.25 : side * 0.75) + (uniform01(rng) * 2.0 - 1.0) * side * 0.1;
    const double col = side * 0.5 + (uniform01(rng) * 2.0 - 1.0) * side * 0.2;
    const double amp = bright ? kHighBrightness : kLowBrightness;
    std::vector<float> px(shape.size());
    for (std::size_t r = 0; r < spec.image_side; ++r)
      for (std::size_t c = 0; c < spec.image_side; ++c) {
        const double dr = static_cast<double>(r) - row;
        const double dc = static_cast<double>(c) - col;
        double v = amp * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        v += spec.noise_sd * noise(rng);
        px[r * spec.image_side + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    out.data.images.emplace_back(shape, std::move(px));
    labels.push_back(label);
    out.bright.push_back(bright);
  }
  out.data.true_labels = std::move(labels);
  out.data.ids = Dataset::positional_ids(n);
  return out;
}

}  // namespace detail

/// Deterministic train/val/eval benchmark. The mechanism only post-processes
/// draws, so the same seed yields the same underlying images for every
/// mechanism.
inline SyntheticBenchmark generate_synthetic_benchmark(const SyntheticSpec& spec) {
  spec.validate();
  auto train = detail::draw_split(spec.n_train, spec, 1);
  auto val = detail::draw_split(spec.n_val, spec, 2);
  auto eval = detail::draw_split(spec.n_eval, spec, 3);

  SyntheticBenchmark b;
  if (spec.mechanism == Mechanism::bias) {
    Rng drop_rng(derive_seed(spec.seed, 4));
    Dataset kept;
    std::vector<Label> kept_labels;
    for (std::size_t i = 0; i < train.data.size(); ++i) {
      const Label l = (*train.data.true_labels)[i];
      const double u = uniform01(drop_rng);
      if (l == 0 && !train.bright[i] && u < spec.bias_fraction) continue;
      kept.images.push_back(train.data.images[i]);
      kept_labels.push_back(l);
      b.train_bright.push_back(train.bright[i]);
    }
    kept.true_labels = std::move(kept_labels);
    kept.ids = Dataset::positional_ids(kept.images.size());
    b.train = std::move(kept);
  } else {
    b.train = std::move(train.data);
    b.train_bright = std::move(train.bright);
  }
  if (spec.mechanism == Mechanism::shift) {
    const auto f = static_cast<float>(spec.shift_factor);
    for (auto& img : eval.data.images) {
      std::vector<float> px(img.pixels().begin(), img.pixels().end());
      for (auto& v : px) v *= f;
      img = ImageTensor(img.shape(), std::move(px));
    }
  }
  b.val = std::move(val.data);
  b.val_bright = std::move(val.bright);
  b.eval = std::move(eval.data);
  b.eval_bright = std::move(eval.bright);
  b.overtrain = spec.mechanism == Mechanism::overfit;
  return b;
}

}  // namespace advdist

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "advdist/common/errors.hpp"

namespace advdist {

using InstanceId = std::uint64_t;
using Label = int;

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const noexcept { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;

  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

/// H x W x C pixel grid with values in [0, 1], stored row-major (h, w, c).
class ImageTensor {
public:
  ImageTensor() = default;

  ImageTensor(ImageShape shape, std::vector<float> pixels) : shape_(shape), pixels_(std::move(pixels)) {
    if (shape_.height == 0 || shape_.width == 0 || shape_.channels == 0)
      throw ValidationError("image dimensions must be positive, got " + shape_.str());
    if (pixels_.size() != shape_.size())
      throw ShapeError("image " + shape_.str() + " needs " + std::to_string(shape_.size()) + " pixels, got " +
                       std::to_string(pixels_.size()));
    for (std::size_t i = 0; i < pixels_.size(); ++i) {
      float v = pixels_[i];
      if (!(v >= 0.0f && v <= 1.0f))
        throw ValidationError("pixel " + std::to_string(i) + " = " + std::to_string(v) + " outside [0,1]");
    }
  }

  static ImageTensor filled(ImageShape shape, float value) {
    return ImageTensor(shape, std::vector<float>(shape.size(), value));
  }

  const ImageShape& shape() const noexcept { return shape_; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return pixels_.size(); }

  std::span<const float> pixels() const noexcept { return pixels_; }
  float operator[](std::size_t i) const noexcept { return pixels_[i]; }
  float at(std::size_t h, std::size_t w, std::size_t c) const {
    return pixels_[(h * shape_.width + w) * shape_.channels + c];
  }

  bool operator==(const ImageTensor&) const = default;

private:
  ImageShape shape_;
  std::vector<float> pixels_;
};

/// Ordered collection of equally-shaped images with unique ids. True labels,
/// when present, are only meant to reach a search through an oracle.
struct Dataset {
  std::vector<ImageTensor> images;
  std::vector<InstanceId> ids;
  std::optional<std::vector<Label>> true_labels;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  bool has_labels() const noexcept { return true_labels.has_value(); }
  ImageShape shape() const { return images.empty() ? ImageShape{} : images.front().shape(); }

  bool operator==(const Dataset&) const = default;

  void validate() const {
    if (ids.size() != images.size())
      throw ValidationError("dataset has " + std::to_string(images.size()) + " images but " +
                            std::to_string(ids.size()) + " ids");
    if (true_labels && true_labels->size() != images.size())
      throw ValidationError("dataset label count does not match image count");
    std::unordered_set<InstanceId> seen;
    for (auto id : ids)
      if (!seen.insert(id).second) throw ValidationError("duplicate instance id " + std::to_string(id));
    for (const auto& img : images)
      if (!(img.shape() == images.front().shape()))
        throw ShapeError("dataset mixes image shapes " + img.shape().str() + " and " + images.front().shape().str());
  }

  /// Ids 0..N-1 in order.
  bool has_positional_ids() const noexcept {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] != i) return false;
    return true;
  }

  static std::vector<InstanceId> positional_ids(std::size_t n) {
    std::vector<InstanceId> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
};

}  // namespace advdist

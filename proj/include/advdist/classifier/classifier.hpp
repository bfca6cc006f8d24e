#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <utility>

#include "advdist/classifier/prediction.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

/// The audited model, seen only through its predictions. Implementations must
/// be deterministic and safe to call concurrently.
class BlackBoxClassifier {
public:
  virtual ~BlackBoxClassifier() = default;

  virtual std::size_t n_classes() const = 0;

  /// False for classifiers that can only answer for known instances (e.g. a
  /// predictions cache) and therefore cannot be attacked.
  virtual bool is_live() const { return true; }

  /// Scores pixels that are not tied to a dataset instance.
  Prediction predict(const ImageTensor& image) const { return do_predict(image, std::nullopt); }

  /// Scores a dataset instance; caches answer by id.
  Prediction predict(const ImageTensor& image, InstanceId id) const { return do_predict(image, id); }

protected:
  virtual Prediction do_predict(const ImageTensor& image, std::optional<InstanceId> id) const = 0;
};

/// Adapts a callable into a live classifier.
class FunctionClassifier final : public BlackBoxClassifier {
public:
  using Fn = std::function<Prediction(const ImageTensor&)>;

  FunctionClassifier(std::size_t n_classes, Fn fn) : n_classes_(n_classes), fn_(std::move(fn)) {}

  std::size_t n_classes() const override { return n_classes_; }

protected:
  Prediction do_predict(const ImageTensor& image, std::optional<InstanceId>) const override { return fn_(image); }

private:
  std::size_t n_classes_;
  Fn fn_;
};

}  // namespace advdist

#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "advdist/classifier/classifier.hpp"
#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/data/image.hpp"
#include "advdist/data/synthetic.hpp"

namespace advdist {

/// Multinomial logistic regression on raw pixels with a calibration temperature.
class ToyClassifier final : public BlackBoxClassifier {
public:
  ToyClassifier(ImageShape input, std::size_t n_classes, std::vector<double> weights, std::vector<double> biases,
                double temperature = 1.0)
      : input_(input), n_classes_(n_classes), weights_(std::move(weights)), biases_(std::move(biases)) {
    if (n_classes_ < 2) throw ValidationError("classifier needs at least two classes");
    if (weights_.size() != n_classes_ * input_.size())
      throw ShapeError("weight matrix must be " + std::to_string(n_classes_) + " x " + std::to_string(input_.size()));
    if (biases_.size() != n_classes_) throw ShapeError("bias vector length must equal class count");
    set_temperature(temperature);
  }

  static ToyClassifier zeros(ImageShape input, std::size_t n_classes) {
    return ToyClassifier(input, n_classes, std::vector<double>(n_classes * input.size(), 0.0),
                         std::vector<double>(n_classes, 0.0));
  }

  std::size_t n_classes() const override { return n_classes_; }
  const ImageShape& input_shape() const noexcept { return input_; }
  double temperature() const noexcept { return temperature_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<double>& biases() const noexcept { return biases_; }

  void set_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("temperature must be positive and finite");
    temperature_ = t;
  }

  /// Unscaled class scores W x + b.
  std::vector<double> logits(const ImageTensor& image) const {
    if (!(image.shape() == input_))
      throw ShapeError("classifier expects " + input_.str() + " images, got " + image.shape().str());
    const auto px = image.pixels();
    const std::size_t d = input_.size();
    std::vector<double> out(biases_);
    for (std::size_t k = 0; k < n_classes_; ++k) {
      const double* w = weights_.data() + k * d;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += w[j] * static_cast<double>(px[j]);
      out[k] += s;
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = "toy-logistic";
    j["height"] = input_.height;
    j["width"] = input_.width;
    j["channels"] = input_.channels;
    j["n_classes"] = n_classes_;
    j["temperature"] = temperature_;
    j["biases"] = biases_;
    j["weights"] = weights_;
    return j;
  }

  static ToyClassifier from_json(const nlohmann::json& j) {
    try {
      ImageShape shape{j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>(),
                       j.at("channels").get<std::size_t>()};
      return ToyClassifier(shape, j.at("n_classes").get<std::size_t>(), j.at("weights").get<std::vector<double>>(),
                           j.at("biases").get<std::vector<double>>(), j.value("temperature", 1.0));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed model file: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << to_json().dump(1) << '\n';
  }

  static ToyClassifier load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what());
    }
    return from_json(j);
  }

protected:
  Prediction do_predict(const ImageTensor& image, std::optional<InstanceId>) const override {
    return prediction_from_logits(logits(image), temperature_);
  }

private:
  ImageShape input_;
  std::size_t n_classes_;
  std::vector<double> weights_;  // n_classes x D, row-major
  std::vector<double> biases_;
  double temperature_ = 1.0;
};

struct TrainParams {
  std::size_t epochs = 200;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  /// Multiplies epochs by kOverfitEpochFactor (set from SyntheticBenchmark::overtrain).
  bool overtrain = false;
};

/// Full-batch gradient descent on mean cross-entropy from a seeded N(0, 0.01^2)
/// initialization. Deterministic given the inputs.
inline ToyClassifier train_toy_classifier(const Dataset& train, const TrainParams& params) {
  if (train.empty()) throw ValidationError("training set is empty");
  if (!train.has_labels()) throw ValidationError("training set has no labels");
  if (!(params.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  train.validate();
  const auto& labels = *train.true_labels;
  std::set<Label> distinct(labels.begin(), labels.end());
  if (*distinct.begin() < 0) throw ValidationError("labels must be non-negative");
  if (distinct.size() < 2) throw DegenerateDataError("training data contains a single class");

  const ImageShape shape = train.shape();
  const std::size_t d = shape.size();
  const std::size_t k = static_cast<std::size_t>(*distinct.rbegin()) + 1;
  const std::size_t n = train.size();

  Rng rng(params.seed);
  std::normal_distribution<double> init(0.0, 0.01);
  std::vector<double> w(k * d);
  for (auto& v : w) v = init(rng);
  std::vector<double> b(k, 0.0);

  const std::size_t epochs = params.epochs * (params.overtrain ? kOverfitEpochFactor : 1);
  std::vector<double> gw(k * d), gb(k), scores(k);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto px = train.images[i].pixels();
      for (std::size_t c = 0; c < k; ++c) {
        double s = b[c];
        const double* wc = w.data() + c * d;
        for (std::size_t j = 0; j < d; ++j) s += wc[j] * px[j];
        scores[c] = s;
      }
      auto p = softmax(scores);
      p[static_cast<std::size_t>(labels[i])] -= 1.0;
      for (std::size_t c = 0; c < k; ++c) {
        gb[c] += p[c];
        double* g = gw.data() + c * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += p[c] * px[j];
      }
    }
    const double step = params.learning_rate / static_cast<double>(n);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= step * gw[j];
    for (std::size_t c = 0; c < k; ++c) b[c] -= step * gb[c];
  }
  return ToyClassifier(shape, k, std::move(w), std::move(b));
}

}  // namespace advdist

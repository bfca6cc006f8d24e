#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "catch_amalgamated.hpp"

#include "advdist/attack/boundary_attack.hpp"
#include "advdist/classifier/cached_classifier.hpp"
#include "advdist/classifier/calibrated_oracle.hpp"
#include "advdist/classifier/calibration.hpp"
#include "advdist/classifier/external_classifier.hpp"
#include "advdist/classifier/reliability.hpp"
#include "advdist/classifier/toy_classifier.hpp"
#include "advdist/data/synthetic.hpp"

using namespace advdist;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("advdist_test_classifier_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ToyClassifier two_logit_model(double z0, double z1) {
  // one-pixel input: logits are just the biases
  return ToyClassifier({1, 1, 1}, 2, {0.0, 0.0}, {z0, z1});
}

struct LogitSet {
  std::vector<std::vector<double>> logits;
  std::vector<Label> labels;
};

// Labels drawn from softmax(true logits); optionally report the logits scaled.
LogitSet sample_logits(std::size_t n, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.5);
  LogitSet s;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z{g(rng), g(rng)};
    const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
    s.labels.push_back(uniform01(rng) < p1 ? 1 : 0);
    s.logits.push_back({z[0] * scale, z[1] * scale});
  }
  return s;
}

double nll_at(const LogitSet& s, double t) {
  // plain two-class NLL, written out independently of temperature_nll
  double nll = 0.0;
  for (std::size_t i = 0; i < s.logits.size(); ++i) {
    const double a = s.logits[i][0] / t, b = s.logits[i][1] / t;
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    nll += lse - (s.labels[i] == 0 ? a : b);
  }
  return nll;
}

// Coarse scan of the whole bracket, then a 1e-4 scan around the coarse winner.
double grid_temperature(const LogitSet& s) {
  auto scan = [&](double lo, double hi, double step) {
    double best_t = lo, best = std::numeric_limits<double>::infinity();
    for (double t = lo; t <= hi; t += step) {
      const double v = nll_at(s, t);
      if (v < best) {
        best = v;
        best_t = t;
      }
    }
    return best_t;
  };
  const double coarse = scan(kMinTemperature, kMaxTemperature, 0.01);
  return scan(std::max(kMinTemperature, coarse - 0.02), coarse + 0.02, 1e-4);
}

}  // namespace

TEST_CASE("zero-weight toy classifier is uniform and breaks ties to label 0") {
  const auto m = ToyClassifier::zeros({4, 4, 1}, 2);
  const auto p = m.predict(ImageTensor::filled({4, 4, 1}, 0.3f));
  CHECK(p.label == 0);
  CHECK(p.confidence == 0.5);
  CHECK_THROWS_AS(m.predict(ImageTensor::filled({3, 4, 1}, 0.3f)), ShapeError);
}

TEST_CASE("softmax confidence and temperature arithmetic") {
  auto m = two_logit_model(2.0, 0.0);
  const auto img = ImageTensor::filled({1, 1, 1}, 0.5f);
  auto p = m.predict(img);
  CHECK(p.label == 0);
  CHECK(p.confidence == Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(p.confidence == Approx(0.8808).margin(1e-4));
  m.set_temperature(2.0);
  p = m.predict(img);
  CHECK(p.label == 0);
  CHECK(p.confidence == Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
  CHECK(p.confidence == Approx(0.7311).margin(1e-4));
  CHECK_THROWS_AS(m.set_temperature(0.0), ValidationError);
  CHECK_THROWS_AS(m.set_temperature(-1.0), ValidationError);
}

TEST_CASE("confidence equals the softmax maximum of the stored logits") {
  Rng rng(4);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> z{g(rng), g(rng), g(rng)};
    const double t = 0.1 + 5.0 * uniform01(rng);
    const auto p = prediction_from_logits(z, t);
    const auto s = softmax(z, t);
    CHECK(p.confidence == Approx(*std::max_element(s.begin(), s.end())).margin(1e-9));
    CHECK(p.confidence > 0.0);
    CHECK(p.confidence <= 1.0);
    CHECK(std::isfinite(p.confidence));
    // temperature never moves the argmax
    CHECK(p.label == prediction_from_logits(z, 1.0).label);
  }
  // large logits do not overflow
  const auto big = prediction_from_logits({1000.0, 0.0});
  CHECK(big.confidence == 1.0);
}

TEST_CASE("toy training separates blob data") {
  SyntheticSpec spec;
  spec.n_train = 400;
  spec.n_val = 10;
  spec.n_eval = 10;
  spec.seed = 2;
  const auto b = generate_synthetic_benchmark(spec);
  const auto m = train_toy_classifier(b.train, {200, 0.5, 9, false});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.train.size(); ++i)
    correct += m.predict(b.train.images[i]).label == (*b.train.true_labels)[i];
  CHECK(static_cast<double>(correct) / b.train.size() >= 0.95);

  const auto again = train_toy_classifier(b.train, {200, 0.5, 9, false});
  CHECK(again.weights() == m.weights());
  CHECK(again.biases() == m.biases());
}

TEST_CASE("zero epochs returns the seeded initialization") {
  Dataset d;
  d.images = {ImageTensor::filled({2, 2, 1}, 0.1f), ImageTensor::filled({2, 2, 1}, 0.9f)};
  d.ids = {0, 1};
  d.true_labels = std::vector<Label>{0, 1};
  const auto m = train_toy_classifier(d, {0, 0.5, 42, false});
  Rng rng(42);
  std::normal_distribution<double> init(0.0, 0.01);
  std::vector<double> expect(8);
  for (auto& v : expect) v = init(rng);
  CHECK(m.weights() == expect);
  CHECK(m.biases() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("training rejects single-class and unlabeled data") {
  Dataset d;
  d.images = {ImageTensor::filled({2, 2, 1}, 0.1f), ImageTensor::filled({2, 2, 1}, 0.9f)};
  d.ids = {0, 1};
  CHECK_THROWS_AS(train_toy_classifier(d, {}), ValidationError);
  d.true_labels = std::vector<Label>{1, 1};
  CHECK_THROWS_AS(train_toy_classifier(d, {}), DegenerateDataError);
}

TEST_CASE("toy model json round trip preserves predictions") {
  auto m = ToyClassifier({2, 1, 1}, 2, {0.5, -1.0, 2.0, 0.25}, {0.1, -0.2}, 1.7);
  const auto dir = scratch_dir("json");
  m.save((dir / "m.json").string());
  const auto back = ToyClassifier::load((dir / "m.json").string());
  const ImageTensor img({2, 1, 1}, {0.3f, 0.8f});
  CHECK(back.predict(img) == m.predict(img));
  CHECK(back.temperature() == 1.7);
}

TEST_CASE("temperature fit on softmax-consistent logits stays near 1") {
  const auto s = sample_logits(5000, 1.0, 17);
  const double t = fit_temperature(s.logits, s.labels);
  CHECK(std::abs(t - 1.0) <= 0.1);
  CHECK(temperature_nll(s.logits, s.labels, t) <= temperature_nll(s.logits, s.labels, 1.0));
}

TEST_CASE("temperature fit undoes 3x overconfidence and agrees with a grid search") {
  const auto s = sample_logits(2000, 3.0, 23);
  const double t = fit_temperature(s.logits, s.labels);
  CHECK(t == Approx(3.0).margin(0.3));
  CHECK(std::abs(t - grid_temperature(s)) <= 2e-4);
  CHECK(temperature_nll(s.logits, s.labels, t) <= temperature_nll(s.logits, s.labels, 1.0));
  for (std::size_t i = 0; i < s.logits.size(); ++i)
    CHECK(prediction_from_logits(s.logits[i], t).label == prediction_from_logits(s.logits[i]).label);
}

TEST_CASE("temperature fit validates input") {
  std::vector<std::vector<double>> none;
  std::vector<Label> no_labels;
  CHECK_THROWS_AS(fit_temperature(none, no_labels), ValidationError);
  std::vector<std::vector<double>> inf{{std::numeric_limits<double>::infinity(), 0.0}};
  std::vector<Label> one{0};
  CHECK_THROWS_AS(fit_temperature(inf, one), ValidationError);
}

TEST_CASE("reliability arithmetic on two instances") {
  std::vector<Prediction> preds{{1, 0.7, std::nullopt}, {1, 0.7, std::nullopt}};
  std::vector<Label> labels{1, 0};
  const auto r = reliability(preds, labels, 10, 0.5, 1.0);
  std::size_t hit = 0;
  for (const auto& b : r.bins)
    if (b.count > 0) {
      ++hit;
      CHECK(b.count == 2);
      CHECK(b.accuracy == 0.5);
      CHECK(b.mean_confidence == Approx(0.7).margin(1e-15));
    }
  CHECK(hit == 1);
  CHECK(r.ece == Approx(0.2).margin(1e-12));
}

TEST_CASE("perfectly confident and correct predictions have zero ECE") {
  std::vector<Prediction> preds(5, Prediction{1, 1.0, std::nullopt});
  std::vector<Label> labels(5, 1);
  const auto r = reliability(preds, labels, 10);
  CHECK(r.ece == 0.0);
  CHECK(r.bins.back().count == 5);
}

TEST_CASE("reliability bins are right-closed") {
  std::vector<Prediction> preds{{0, 0.55, std::nullopt}, {0, 0.5, std::nullopt}, {0, 0.5500001, std::nullopt}};
  std::vector<Label> labels{0, 0, 0};
  const auto r = reliability(preds, labels, 10, 0.5, 1.0);
  CHECK(r.bins[0].count == 2);
  CHECK(r.bins[1].count == 1);
  CHECK_THROWS_AS(reliability(preds, labels, 0), ValidationError);
  CHECK_THROWS_AS(reliability(preds, labels, 5, 1.0, 0.5), ValidationError);
}

TEST_CASE("ECE matches a two-pass recount on random input") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Prediction> preds;
    std::vector<Label> labels;
    for (int i = 0; i < 200; ++i) {
      preds.push_back({static_cast<Label>(uniform_index(rng, 2)), 0.5 + 0.5 * uniform01(rng), std::nullopt});
      labels.push_back(static_cast<Label>(uniform_index(rng, 2)));
    }
    const std::size_t bins = 1 + uniform_index(rng, 15);
    const auto r = reliability(preds, labels, bins, 0.5, 1.0);

    // pass 1: assign bins by a linear scan over right-closed edges
    std::vector<int> which(preds.size());
    const double w = 0.5 / static_cast<double>(bins);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      std::size_t b = 0;
      while (b + 1 < bins && preds[i].confidence > 0.5 + w * static_cast<double>(b + 1)) ++b;
      which[i] = static_cast<int>(b);
    }
    // pass 2: per-bin sums
    double ece = 0.0;
    std::size_t total = 0;
    for (std::size_t b = 0; b < bins; ++b) {
      double n = 0, acc = 0, conf = 0;
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (which[i] == static_cast<int>(b)) {
          n += 1;
          conf += preds[i].confidence;
          acc += preds[i].label == labels[i];
        }
      CHECK(r.bins[b].count == static_cast<std::size_t>(n));
      total += static_cast<std::size_t>(n);
      if (n > 0) ece += n / 200.0 * std::abs(acc / n - conf / n);
    }
    CHECK(total == 200);
    CHECK(r.total() == 200);
    CHECK(r.ece == Approx(ece).margin(1e-12));
    CHECK(r.ece >= 0.0);
    CHECK(r.ece <= 1.0);
  }
}

TEST_CASE("calibrated oracle accuracy converges to the stated confidence") {
  for (double c : {0.6, 0.75, 0.9}) {
    std::map<InstanceId, CalibratedSyntheticOracle::Instance> inst;
    const std::size_t k = 10000;
    for (std::size_t i = 0; i < k; ++i) inst[i] = {c, 1};
    CalibratedSyntheticOracle oracle(inst, 1234);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < k; ++i) correct += oracle.label(i) == 1;
    const double acc = static_cast<double>(correct) / k;
    const double se = std::sqrt(c * (1 - c) / k);
    CHECK(std::abs(acc - c) <= 3 * se);
  }
}

TEST_CASE("calibrated oracle answers are stable and order independent") {
  std::map<InstanceId, CalibratedSyntheticOracle::Instance> inst{{1, {0.5, 0}}, {2, {0.5, 1}}, {3, {0.99, 1}}};
  CalibratedSyntheticOracle a(inst, 5), b(inst, 5);
  const Label a3 = a.label(3), a1 = a.label(1);
  CHECK(b.label(1) == a1);
  CHECK(b.label(3) == a3);
  CHECK(a.label(1) == a1);
  CHECK_THROWS_AS(a.label(9), LookupError);
  inst[4] = {0.0, 1};
  CHECK_THROWS_AS(CalibratedSyntheticOracle(inst, 5), ValidationError);
}

TEST_CASE("cached classifier answers by id and refuses novel pixels") {
  const auto dir = scratch_dir("cached");
  const auto path = (dir / "p.csv").string();
  {
    std::ofstream f(path);
    f << "id,predicted_label,confidence,logit_0,logit_1\n"
      << "3,1,0.82,-0.75,0.766\n"
      << "5,0,0.6,0.2,-0.2\n";
  }
  const auto c = CachedClassifier::from_file(path);
  const auto img = ImageTensor::filled({2, 2, 1}, 0.5f);
  const auto p = c.predict(img, 3);
  CHECK(p.label == 1);
  CHECK(p.confidence == 0.82);
  CHECK(p.logits == std::vector<double>{-0.75, 0.766});
  CHECK(c.n_classes() == 2);
  CHECK_THROWS_AS(c.predict(img, 4), LookupError);
  CHECK_THROWS_AS(c.predict(img), UnsupportedOperation);
  CHECK_THROWS_AS(boundary_attack(c, img, AttackParams{}), UnsupportedOperation);

  write_predictions_csv(c.table(), (dir / "q.csv").string());
  CHECK(read_predictions_csv((dir / "q.csv").string()) == c.table());
}

TEST_CASE("prediction csv rejects bad rows") {
  const auto dir = scratch_dir("badcsv");
  const auto path = (dir / "p.csv").string();
  {
    std::ofstream f(path);
    f << "id,predicted_label,confidence\n3,1,1.5\n";
  }
  CHECK_THROWS_AS(read_predictions_csv(path), FormatError);
  {
    std::ofstream f(path);
    f << "id,predicted_label,confidence\n3,1,0.7\n3,0,0.6\n";
  }
  CHECK_THROWS_AS(read_predictions_csv(path), FormatError);
  {
    std::ofstream f(path);
    f << "id,confidence\n3,0.7\n";
  }
  CHECK_THROWS_AS(read_predictions_csv(path), FormatError);
  CHECK_THROWS_AS(read_predictions_csv((dir / "none.csv").string()), IoError);
}

TEST_CASE("external adapter request encoding") {
  const ImageTensor img({1, 2, 1}, {0.25f, 0.5f});
  const auto j = encode_classify_request(img, 7);
  CHECK(j["id"] == 7);
  CHECK(j["h"] == 1);
  CHECK(j["w"] == 2);
  CHECK(j["c"] == 1);
  CHECK(j["pixels"].size() == 2);
  CHECK(encode_classify_request(img, std::nullopt)["id"].is_null());
  const auto p = decode_classify_response(R"({"label":1,"confidence":0.9,"logits":null})");
  CHECK(p.label == 1);
  CHECK_FALSE(p.logits.has_value());
  CHECK_THROWS_AS(decode_classify_response("nope"), AdapterError);
  CHECK_THROWS_AS(decode_classify_response(R"({"label":1,"confidence":1.2})"), AdapterError);
}

TEST_CASE("external adapter drives a subprocess model") {
  ExternalClassifier model(THRESHOLD_MODEL);
  const auto bright = model.predict(ImageTensor::filled({4, 4, 1}, 0.9f));
  const auto dark = model.predict(ImageTensor::filled({4, 4, 1}, 0.1f));
  CHECK(bright.label == 1);
  CHECK(dark.label == 0);
  CHECK(bright.confidence > 0.5);
  CHECK(model.predict(ImageTensor::filled({4, 4, 1}, 0.9f)) == bright);

  AttackParams params;
  params.max_model_queries = 300;
  params.seed = 3;
  const auto original = ImageTensor::filled({2, 2, 1}, 0.9f);
  const auto r = boundary_attack(model, original, params);
  CHECK(model.predict(r.adversarial).label == 0);
}

TEST_CASE("external adapter failures surface as adapter errors") {
  ExternalClassifier garbage(std::string(THRESHOLD_MODEL) + " --garbage");
  CHECK_THROWS_AS(garbage.predict(ImageTensor::filled({2, 2, 1}, 0.5f)), AdapterError);

  ExternalClassifier quits(std::string(THRESHOLD_MODEL) + " --exit-after 1");
  quits.predict(ImageTensor::filled({2, 2, 1}, 0.5f));
  CHECK_THROWS_AS(quits.predict(ImageTensor::filled({2, 2, 1}, 0.5f)), AdapterError);

  ExternalClassifier missing("/nonexistent/model/binary");
  CHECK_THROWS_AS(missing.predict(ImageTensor::filled({2, 2, 1}, 0.5f)), AdapterError);
}

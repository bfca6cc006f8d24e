#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "advdist/attack/attack_io.hpp"
#include "advdist/classifier/cached_classifier.hpp"
#include "advdist/classifier/calibrated_oracle.hpp"
#include "advdist/classifier/calibration.hpp"
#include "advdist/classifier/external_classifier.hpp"
#include "advdist/classifier/reliability.hpp"
#include "advdist/classifier/toy_classifier.hpp"
#include "advdist/common/parallel.hpp"
#include "advdist/data/adt1.hpp"
#include "advdist/data/synthetic.hpp"
#include "advdist/distance/adv_distance.hpp"
#include "advdist/harness/aggregate.hpp"
#include "advdist/harness/config.hpp"
#include "advdist/metrics/pca.hpp"
#include "advdist/search/search.hpp"

namespace advdist {

/// What an audit runs on: an eval set with true labels and a classifier.
struct AuditInputs {
  Dataset eval;
  std::shared_ptr<const BlackBoxClassifier> classifier;
  std::optional<std::vector<AttackSummary>> precomputed_attacks;
  /// Temperature applied to a toy classifier when calibration was requested.
  std::optional<double> temperature;
};

namespace detail {

inline constexpr std::uint64_t kTrainStream = 0x747261696e;
inline constexpr std::uint64_t kOracleStream = 0x6f7261636c65;

inline ToyClassifier train_for_config(const ExperimentConfig& c, const Dataset& train, bool overtrain) {
  TrainParams p;
  p.epochs = c.train_epochs;
  p.learning_rate = c.learning_rate;
  p.seed = derive_seed(c.seed, kTrainStream);
  p.overtrain = overtrain;
  return train_toy_classifier(train, p);
}

inline double calibrate_toy(ToyClassifier& model, const Dataset& val) {
  if (!val.has_labels()) throw ValidationError("calibration needs a labeled validation split");
  std::vector<std::vector<double>> logits;
  logits.reserve(val.size());
  for (const auto& img : val.images) logits.push_back(model.logits(img));
  const double t = fit_temperature(logits, *val.true_labels);
  model.set_temperature(t);
  return t;
}

}  // namespace detail

/// Loads or generates the data and builds the classifier a config names.
inline AuditInputs prepare_inputs(const ExperimentConfig& c) {
  c.validate();
  AuditInputs in;
  std::optional<SyntheticBenchmark> bench;
  if (c.synthetic) bench = generate_synthetic_benchmark(*c.synthetic);
  in.eval = bench ? bench->eval : read_dataset(c.eval_path);
  if (!in.eval.has_labels()) throw ValidationError("the eval set needs true labels for the ground-truth oracle");
  auto val = [&]() -> Dataset {
    if (bench) return bench->val;
    if (c.val_path.empty()) throw ValidationError("calibration needs dataset.val");
    return read_dataset(c.val_path);
  };

  switch (c.classifier) {
    case ClassifierSource::toy_train:
    case ClassifierSource::toy: {
      ToyClassifier model = c.classifier == ClassifierSource::toy
                                ? ToyClassifier::load(c.model_path)
                                : detail::train_for_config(c, bench ? bench->train : read_dataset(c.train_path),
                                                           bench && bench->overtrain);
      if (c.calibrate) in.temperature = detail::calibrate_toy(model, val());
      in.classifier = std::make_shared<ToyClassifier>(std::move(model));
      break;
    }
    case ClassifierSource::cached:
      if (c.calibrate) throw ValidationError("cached predictions cannot be recalibrated here");
      in.classifier = std::make_shared<CachedClassifier>(read_predictions_csv(c.predictions_path), c.n_classes);
      break;
    case ClassifierSource::external:
      if (c.calibrate) throw ValidationError("external classifiers cannot be recalibrated here");
      in.classifier = std::make_shared<ExternalClassifier>(c.external_command, c.n_classes);
      break;
  }
  if (!c.attacks_path.empty()) in.precomputed_attacks = read_attack_csv(c.attacks_path);
  return in;
}

struct ReplicationInfo {
  std::size_t replication = 0;
  std::size_t subset = 0;
  std::size_t filtered = 0;
  bool truncated = false;
  bool skipped = false;
  /// Fewer than two finite attack results: no AdvDist ranking this replication.
  bool advdist_unavailable = false;
};

struct ExperimentResult {
  /// Replication-major, strategies in configured order.
  std::vector<SearchSession> sessions;
  std::vector<std::size_t> session_replication;
  std::vector<ReplicationInfo> replications;
  AggregateCurves curves;
  PredictionTable predictions;
  std::map<InstanceId, AttackSummary> attacks;
  ReliabilityReport reliability;
  std::size_t candidates = 0;
  std::size_t failed_attacks = 0;
  std::size_t skipped = 0;
  std::size_t truncated = 0;
  bool subset_truncated = false;

  std::vector<std::string> notes() const {
    std::vector<std::string> n;
    n.push_back("candidates (predicted critical class, confidence > tau): " + std::to_string(candidates));
    n.push_back("attacked: " + std::to_string(attacks.size()) + ", failed to initialize: " +
                std::to_string(failed_attacks));
    n.push_back("replications: " + std::to_string(replications.size()) + ", skipped (no candidates): " +
                std::to_string(skipped) + ", truncated (fewer candidates than budget): " + std::to_string(truncated));
    if (subset_truncated) n.push_back("warning: subset_size exceeds the eval set; whole eval set used per replication");
    return n;
  }
};

/// Subset of eval positions for one replication: a without-replacement draw
/// seeded by (master, r), returned sorted.
inline std::vector<std::size_t> replication_subset(std::size_t n, std::size_t subset_size, std::uint64_t master,
                                                   std::size_t r) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t m = std::min(n, subset_size);
  Rng rng(derive_seed(master, r));
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Seed of strategy s in replication r; independent of which other strategies run.
inline std::uint64_t strategy_seed(std::uint64_t master, std::size_t r, Strategy s) {
  return derive_seed(derive_seed(master, r), static_cast<std::uint64_t>(s) + 1);
}

inline ReliabilityReport eval_reliability(const Dataset& eval, const PredictionTable& preds, std::size_t n_classes) {
  std::vector<Prediction> p;
  for (auto id : eval.ids) p.push_back(preds.at(id));
  const double lo = n_classes == 2 ? 0.5 : 0.0;
  return reliability(p, *eval.true_labels, 10, lo, 1.0);
}

/// The replicated audit protocol: per replication, draw a subset, keep
/// instances predicted as the critical class with confidence above tau, rank
/// them by Adversarial Distance (expected perturbation fitted on that
/// replication's instances) and run every strategy against the ground truth.
/// Attacks run once per instance (per-instance seeds make reuse exact) and PCA
/// features are fitted once on the whole eval set.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const AuditInputs& in) {
  c.validate();
  const Dataset& eval = in.eval;
  eval.validate();
  if (eval.empty()) throw ValidationError("eval set is empty");
  if (!eval.has_labels()) throw ValidationError("eval set has no true labels");
  const unsigned workers = c.workers == 0 ? default_workers() : c.workers;
  const BlackBoxClassifier& clf = *in.classifier;

  ExperimentResult res;
  std::vector<Prediction> preds(eval.size());
  parallel_for(eval.size(), [&](std::size_t i) { preds[i] = clf.predict(eval.images[i], eval.ids[i]); }, workers);
  for (std::size_t i = 0; i < eval.size(); ++i) res.predictions[eval.ids[i]] = preds[i];
  res.reliability = eval_reliability(eval, res.predictions, clf.n_classes());

  std::vector<bool> candidate(eval.size(), false);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    candidate[i] = preds[i].label == c.critical_class && preds[i].confidence > c.tau;
    res.candidates += candidate[i] ? 1 : 0;
  }
  res.subset_truncated = c.subset_size > eval.size();

  std::vector<std::vector<std::size_t>> filtered(c.replications);
  std::vector<bool> used(eval.size(), false);
  for (std::size_t r = 0; r < c.replications; ++r) {
    for (auto i : replication_subset(eval.size(), c.subset_size, c.seed, r))
      if (candidate[i]) {
        filtered[r].push_back(i);
        used[i] = true;
      }
  }

  const bool need_attacks =
      std::find(c.strategies.begin(), c.strategies.end(), Strategy::advdist) != c.strategies.end();
  if (need_attacks) {
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < eval.size(); ++i)
      if (used[i]) todo.push_back(i);
    if (in.precomputed_attacks) {
      std::map<InstanceId, AttackSummary> given;
      for (const auto& a : *in.precomputed_attacks) given[a.id] = a;
      for (auto i : todo) {
        auto it = given.find(eval.ids[i]);
        if (it == given.end()) throw LookupError("no precomputed attack for instance " + std::to_string(eval.ids[i]));
        res.attacks[eval.ids[i]] = it->second;
      }
    } else {
      std::vector<ImageTensor> images, starts;
      std::vector<InstanceId> ids;
      for (auto i : todo) {
        images.push_back(eval.images[i]);
        ids.push_back(eval.ids[i]);
      }
      for (std::size_t i = 0; i < eval.size(); ++i)
        if (preds[i].label != c.critical_class) starts.push_back(eval.images[i]);
      for (const auto& a : attack_all(clf, images, ids, c.attack, starts, workers)) res.attacks[a.instance_id] = a.summary();
    }
    for (const auto& [id, a] : res.attacks) res.failed_attacks += a.finite() ? 0 : 1;
  }

  const std::size_t k = std::min({c.pca_components, eval.shape().size(), eval.size()});
  const FeatureSpace fs = fit_pca(eval.images, k, eval.ids);
  std::vector<std::vector<double>> used_features;
  for (std::size_t i = 0; i < eval.size(); ++i)
    if (used[i]) used_features.push_back(fs.features_of(eval.ids[i]));
  const double sigma = default_bandwidth(used_features);

  std::map<InstanceId, Label> truth;
  for (std::size_t i = 0; i < eval.size(); ++i) truth[eval.ids[i]] = (*eval.true_labels)[i];

  res.replications.resize(c.replications);
  std::vector<std::vector<SearchSession>> per_rep(c.replications);
  parallel_for(
      c.replications,
      [&](std::size_t r) {
        auto& info = res.replications[r];
        info.replication = r;
        info.subset = std::min(eval.size(), c.subset_size);
        info.filtered = filtered[r].size();
        if (filtered[r].empty()) {
          info.skipped = true;
          return;
        }
        info.truncated = filtered[r].size() < c.budget;

        std::vector<EvalRecord> records;
        std::vector<std::vector<double>> features;
        for (auto i : filtered[r]) {
          records.push_back({eval.ids[i], preds[i].confidence, preds[i].label});
          features.push_back(fs.features_of(eval.ids[i]));
        }
        if (need_attacks) {
          std::vector<AttackSummary> attacks;
          for (const auto& rec : records) attacks.push_back(res.attacks.at(rec.instance_id));
          std::size_t finite = 0;
          for (const auto& a : attacks) finite += a.finite() ? 1 : 0;
          if (finite >= static_cast<std::size_t>(c.loess.degree + 1) &&
              std::ceil(c.loess.span * static_cast<double>(finite)) >= static_cast<double>(c.loess.degree + 1)) {
            std::map<InstanceId, double> ad;
            for (const auto& a : compute_adv_distances(attacks, res.predictions, c.loess)) ad[a.instance_id] = a.adv_dist;
            for (auto& rec : records)
              if (auto it = ad.find(rec.instance_id); it != ad.end()) rec.adv_dist = it->second;
          } else {
            info.advdist_unavailable = true;
          }
        }
        auto pool = std::make_shared<const SearchPool>(SearchPool::make(std::move(records), std::move(features), sigma));
        FunctionOracle oracle([&](InstanceId id) { return truth.at(id); });
        for (auto s : c.strategies)
          per_rep[r].push_back(run_search(pool, s, oracle, c.budget, strategy_seed(c.seed, r, s)));
      },
      workers);

  for (std::size_t r = 0; r < c.replications; ++r) {
    res.skipped += res.replications[r].skipped ? 1 : 0;
    res.truncated += res.replications[r].truncated ? 1 : 0;
    for (auto& s : per_rep[r]) {
      res.sessions.push_back(std::move(s));
      res.session_replication.push_back(r);
    }
  }
  res.curves = aggregate(res.sessions);
  return res;
}

/// Search pool for ad-hoc audits (the `search` and `serve` commands): eval
/// instances predicted as the critical class with confidence above tau,
/// carrying Adversarial Distances when given, with PCA features of the whole
/// eval set.
inline std::shared_ptr<const SearchPool> make_audit_pool(const Dataset& eval, const PredictionTable& preds,
                                                         const std::vector<AdvDistRecord>& advdist, Label critical,
                                                         double tau, std::size_t pca_components = kDefaultPcaComponents) {
  eval.validate();
  std::map<InstanceId, double> ad;
  for (const auto& r : advdist) ad[r.instance_id] = r.adv_dist;
  const std::size_t k = std::min({pca_components, eval.shape().size(), eval.size()});
  const FeatureSpace fs = fit_pca(eval.images, k, eval.ids);
  std::vector<EvalRecord> records;
  std::vector<std::vector<double>> features;
  for (auto id : eval.ids) {
    auto it = preds.find(id);
    if (it == preds.end()) throw LookupError("no prediction for instance " + std::to_string(id));
    const auto& p = it->second;
    if (p.label != critical || !(p.confidence > tau)) continue;
    EvalRecord r{id, p.confidence, p.label};
    if (auto a = ad.find(id); a != ad.end()) r.adv_dist = a->second;
    records.push_back(r);
    features.push_back(fs.features_of(id));
  }
  if (records.empty()) throw ValidationError("no instance is predicted as the critical class with confidence above tau");
  const double sigma = default_bandwidth(features);
  return std::make_shared<const SearchPool>(SearchPool::make(std::move(records), std::move(features), sigma));
}

/// All sessions in one file: `replication,strategy,` followed by the trace columns.
inline void write_experiment_traces(const ExperimentResult& res, const std::string& path) {
  auto out = open_for_write(path);
  out << "replication,strategy," << kTraceHeader << '\n';
  for (std::size_t i = 0; i < res.sessions.size(); ++i) {
    std::ostringstream rows;
    write_trace_rows(rows, res.sessions[i]);
    std::istringstream lines(rows.str());
    std::string line;
    while (std::getline(lines, line))
      out << res.session_replication[i] << ',' << to_string(res.sessions[i].strategy) << ',' << line << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline void write_experiment_outputs(const ExperimentConfig& c, const ExperimentResult& res) {
  if (c.out_dir.empty()) return;
  emit_reports(res.curves, c.out_dir, res.reliability, res.notes());
  const std::filesystem::path dir(c.out_dir);
  write_predictions_csv(res.predictions, (dir / "predictions.csv").string());
  if (!res.attacks.empty()) {
    std::vector<AttackSummary> a;
    for (const auto& [id, s] : res.attacks) a.push_back(s);
    write_attack_csv(a, (dir / "attacks.csv").string());
  }
  if (c.write_traces) write_experiment_traces(res, (dir / "traces.csv").string());
}

/// Simulated audit of a perfectly calibrated classifier: each replication
/// draws `pool_size` instances with confidences uniform in (lo, hi), answers
/// queries from a CalibratedSyntheticOracle, and runs each strategy.
struct CalibratedSimulationConfig {
  std::size_t replications = 1000;
  std::size_t budget = 50;
  std::size_t pool_size = 2000;
  double confidence_lo = 0.65;
  double confidence_hi = 0.99;
  std::vector<Strategy> strategies{Strategy::random};
  std::uint64_t seed = 0;
  unsigned workers = 0;

  void validate() const {
    if (replications == 0 || budget == 0 || pool_size == 0)
      throw ValidationError("replications, budget and pool_size must be positive");
    if (!(confidence_lo > 0.0 && confidence_lo < confidence_hi && confidence_hi <= 1.0))
      throw ValidationError("confidence range must satisfy 0 < lo < hi <= 1");
    for (auto s : strategies)
      if (s == Strategy::advdist) throw ValidationError("the calibrated simulation has no images to attack");
  }
};

struct CalibratedSimulationResult {
  std::vector<SearchSession> sessions;
  AggregateCurves curves;
};

inline CalibratedSimulationResult run_calibrated_simulation(const CalibratedSimulationConfig& c) {
  c.validate();
  const unsigned workers = c.workers == 0 ? default_workers() : c.workers;
  // Features are the confidences themselves; the median distance between two
  // uniform draws on an interval of width w is w (1 - 1/sqrt 2).
  const double sigma = (c.confidence_hi - c.confidence_lo) * (1.0 - 1.0 / std::sqrt(2.0));
  std::vector<std::vector<SearchSession>> per_rep(c.replications);
  parallel_for(
      c.replications,
      [&](std::size_t r) {
        const std::uint64_t rep_seed = derive_seed(c.seed, r);
        Rng rng(rep_seed);
        std::uniform_real_distribution<double> conf(c.confidence_lo, c.confidence_hi);
        std::vector<EvalRecord> records;
        std::vector<std::vector<double>> features;
        std::map<InstanceId, CalibratedSyntheticOracle::Instance> instances;
        for (std::size_t i = 0; i < c.pool_size; ++i) {
          const double p = conf(rng);
          records.push_back({i, p, 1});
          features.push_back({p});
          instances[i] = {p, 1};
        }
        auto pool = std::make_shared<const SearchPool>(SearchPool::make(std::move(records), std::move(features), sigma));
        CalibratedSyntheticOracle oracle(std::move(instances), derive_seed(rep_seed, detail::kOracleStream));
        for (auto s : c.strategies)
          per_rep[r].push_back(run_search(pool, s, oracle, c.budget, strategy_seed(c.seed, r, s)));
      },
      workers);
  CalibratedSimulationResult out;
  for (auto& v : per_rep)
    for (auto& s : v) out.sessions.push_back(std::move(s));
  out.curves = aggregate(out.sessions);
  return out;
}

}  // namespace advdist

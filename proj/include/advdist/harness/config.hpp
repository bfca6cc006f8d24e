#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "advdist/attack/boundary_attack.hpp"
#include "advdist/common/csv.hpp"
#include "advdist/common/errors.hpp"
#include "advdist/data/synthetic.hpp"
#include "advdist/distance/adv_distance.hpp"
#include "advdist/search/strategies.hpp"

namespace advdist {

enum class ClassifierSource { toy_train, toy, cached, external };

inline std::string to_string(ClassifierSource s) {
  switch (s) {
    case ClassifierSource::toy_train: return "toy-train";
    case ClassifierSource::toy: return "toy";
    case ClassifierSource::cached: return "cached";
    case ClassifierSource::external: return "external";
  }
  return "?";
}

inline ClassifierSource parse_classifier_source(const std::string& s) {
  if (s == "toy-train") return ClassifierSource::toy_train;
  if (s == "toy") return ClassifierSource::toy;
  if (s == "cached") return ClassifierSource::cached;
  if (s == "external") return ClassifierSource::external;
  throw ValidationError("unknown classifier source '" + s + "' (expected toy-train, toy, cached or external)");
}

inline constexpr std::size_t kDeskReplications = 100;
inline constexpr std::size_t kDeskSubsetSize = 500;

struct ExperimentConfig {
  // Data: a synthetic benchmark, or ADT1 files (eval must carry true labels).
  std::optional<SyntheticSpec> synthetic;
  std::string train_path, val_path, eval_path;

  ClassifierSource classifier = ClassifierSource::toy_train;
  std::string model_path;        // toy
  std::string predictions_path;  // cached
  std::string external_command;  // external
  std::size_t n_classes = 2;
  std::size_t train_epochs = 200;
  double learning_rate = 0.5;
  /// Temperature-scale the classifier on the validation split before auditing.
  bool calibrate = false;

  Label critical_class = 1;
  double tau = 0.65;
  std::size_t subset_size = 2000;
  std::size_t replications = 1000;
  std::size_t budget = 50;
  std::vector<Strategy> strategies = all_strategies();
  AttackParams attack;
  /// Attack results computed earlier (`attack` subcommand); required for cached predictions.
  std::string attacks_path;
  AdvDistParams loess;
  std::size_t pca_components = 50;
  std::uint64_t seed = 0;
  unsigned workers = 0;  // 0 = hardware concurrency
  std::string out_dir;
  bool write_traces = true;

  /// Protocol sized for a desk machine.
  void apply_desk() {
    replications = kDeskReplications;
    subset_size = kDeskSubsetSize;
  }

  void validate() const {
    if (!synthetic && eval_path.empty()) throw ValidationError("config needs a synthetic benchmark or an eval dataset");
    if (synthetic) synthetic->validate();
    if (!(tau >= 0.0 && tau < 1.0)) throw ValidationError("tau must lie in [0, 1)");
    if (n_classes == 2 && !(tau > 0.5)) throw ValidationError("tau must exceed 0.5 for a binary classifier");
    if (subset_size == 0) throw ValidationError("subset_size must be positive");
    if (replications == 0) throw ValidationError("replications must be positive");
    if (budget == 0) throw ValidationError("budget must be positive");
    if (strategies.empty()) throw ValidationError("no strategies configured");
    if (critical_class < 0 || static_cast<std::size_t>(critical_class) >= n_classes)
      throw ValidationError("critical_class outside the class set");
    if (pca_components == 0) throw ValidationError("pca_components must be positive");
    attack.validate();
    if (classifier == ClassifierSource::cached && predictions_path.empty())
      throw ValidationError("cached classifier needs classifier.predictions");
    if (classifier == ClassifierSource::cached && attacks_path.empty())
      throw ValidationError("cached predictions cannot be attacked; supply attack.precomputed");
    if (classifier == ClassifierSource::toy && model_path.empty()) throw ValidationError("toy classifier needs classifier.model");
    if (classifier == ClassifierSource::external && external_command.empty())
      throw ValidationError("external classifier needs classifier.command");
    if (classifier == ClassifierSource::toy_train && !synthetic && train_path.empty())
      throw ValidationError("toy-train needs a training split");
  }
};

inline std::vector<Strategy> parse_strategy_list(const std::string& text) {
  std::vector<Strategy> out;
  for (auto f : split_fields(text)) {
    auto name = std::string(trim(f));
    if (name.empty()) continue;
    if (name == "all") return all_strategies();
    out.push_back(parse_strategy(name));
  }
  return out;
}

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are errors so typos don't
/// silently fall back to defaults.
inline void apply_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto real = [&] { return parse_real(value, key); };
  auto count = [&] { return parse_int<std::size_t>(value, key); };
  auto synth = [&]() -> SyntheticSpec& {
    if (!c.synthetic) c.synthetic.emplace();
    return *c.synthetic;
  };
  if (key == "synthetic.mechanism") synth().mechanism = parse_mechanism(value);
  else if (key == "synthetic.bias_fraction") synth().bias_fraction = real();
  else if (key == "synthetic.noise_sd") synth().noise_sd = real();
  else if (key == "synthetic.shift_factor") synth().shift_factor = real();
  else if (key == "synthetic.n_train") synth().n_train = count();
  else if (key == "synthetic.n_val") synth().n_val = count();
  else if (key == "synthetic.n_eval") synth().n_eval = count();
  else if (key == "synthetic.image_side") synth().image_side = count();
  else if (key == "synthetic.seed") synth().seed = parse_int<std::uint64_t>(value, key);
  else if (key == "dataset.train") c.train_path = value;
  else if (key == "dataset.val") c.val_path = value;
  else if (key == "dataset.eval") c.eval_path = value;
  else if (key == "classifier") c.classifier = parse_classifier_source(value);
  else if (key == "classifier.model") c.model_path = value;
  else if (key == "classifier.predictions") c.predictions_path = value;
  else if (key == "classifier.command") c.external_command = value;
  else if (key == "classifier.classes") c.n_classes = count();
  else if (key == "classifier.calibrate") c.calibrate = detail::parse_bool(value, key);
  else if (key == "train.epochs") c.train_epochs = count();
  else if (key == "train.learning_rate") c.learning_rate = real();
  else if (key == "critical_class") c.critical_class = parse_int<Label>(value, key);
  else if (key == "tau") c.tau = real();
  else if (key == "subset_size") c.subset_size = count();
  else if (key == "replications") c.replications = count();
  else if (key == "budget") c.budget = count();
  else if (key == "strategies") c.strategies = parse_strategy_list(value);
  else if (key == "attack.max_queries") c.attack.max_model_queries = count();
  else if (key == "attack.init_trials") c.attack.init_trials = count();
  else if (key == "attack.source_step") c.attack.source_step = real();
  else if (key == "attack.orthogonal_step") c.attack.orthogonal_step = real();
  else if (key == "attack.step_adapt") c.attack.step_adapt = real();
  else if (key == "attack.convergence_delta") c.attack.convergence_mae_delta = real();
  else if (key == "attack.seed") c.attack.seed = parse_int<std::uint64_t>(value, key);
  else if (key == "attack.precomputed") c.attacks_path = value;
  else if (key == "loess.span") c.loess.span = real();
  else if (key == "loess.degree") c.loess.degree = parse_int<int>(value, key);
  else if (key == "loess.space") {
    if (value == "log") c.loess.space = ResidualSpace::log_mae;
    else if (value == "raw") c.loess.space = ResidualSpace::raw_mae;
    else throw ValidationError("loess.space must be 'log' or 'raw'");
  }
  else if (key == "pca.components") c.pca_components = count();
  else if (key == "seed") c.seed = parse_int<std::uint64_t>(value, key);
  else if (key == "workers") c.workers = parse_int<unsigned>(value, key);
  else if (key == "out") c.out_dir = value;
  else if (key == "write_traces") c.write_traces = detail::parse_bool(value, key);
  else if (key == "desk") {
    if (detail::parse_bool(value, key)) c.apply_desk();
  }
  else throw ValidationError("unknown config key '" + key + "'");
}

/// `key = value` per line, `#` starts a comment.
inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "config",
                                     ExperimentConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto body = trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    try {
      apply_config_value(base, key, value);
    } catch (const Error& e) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline ExperimentConfig read_config_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return parse_config(in, path, std::move(base));
}

}  // namespace advdist

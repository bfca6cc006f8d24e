// advdist: command-line front end for the toolkit.
//
//   advdist generate   --out DIR [--mechanism bias] [--seed N]
//   advdist train      --dataset train.adt1 --out model.json
//   advdist calibrate  --model model.json --dataset val.adt1 --out calibrated.json
//   advdist predict    --model model.json --dataset eval.adt1 --out predictions.csv
//   advdist attack     --model model.json --dataset eval.adt1 --out attacks.csv
//   advdist advdist    --attacks attacks.csv --predictions predictions.csv --out advdist.csv
//   advdist search     --dataset eval.adt1 --predictions p.csv --advdist a.csv --strategy advdist --out trace.csv
//   advdist experiment --config run.cfg --desk --out results/
//   advdist serve      --dataset eval.adt1 --predictions p.csv --advdist a.csv --port 8080
//
// Exit codes: 0 ok, 2 validation, 3 I/O, 4 classifier adapter.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "advdist/attack/attack_io.hpp"
#include "advdist/classifier/cached_classifier.hpp"
#include "advdist/classifier/calibration.hpp"
#include "advdist/classifier/external_classifier.hpp"
#include "advdist/classifier/reliability.hpp"
#include "advdist/classifier/toy_classifier.hpp"
#include "advdist/data/adt1.hpp"
#include "advdist/data/synthetic.hpp"
#include "advdist/distance/adv_distance.hpp"
#include "advdist/harness/experiment.hpp"
#include "advdist/service/http_server.hpp"

using namespace advdist;

namespace {

struct ModelFlags {
  std::string model;
  std::string external;
  std::size_t classes = 2;

  void add(CLI::App* app) {
    auto* m = app->add_option("--model", model, "toy classifier JSON");
    auto* e = app->add_option("--external", external, "command speaking the JSON-lines classify protocol");
    m->excludes(e);
    app->add_option("--classes", classes, "class count of an external classifier");
  }

  std::unique_ptr<BlackBoxClassifier> load() const {
    if (!model.empty()) return std::make_unique<ToyClassifier>(ToyClassifier::load(model));
    if (!external.empty()) return std::make_unique<ExternalClassifier>(external, classes);
    throw ValidationError("give --model or --external");
  }
};

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  for (auto f : split_fields(s)) out.emplace_back(trim(f));
  return out;
}

ResidualSpace parse_space(const std::string& s) {
  if (s == "log") return ResidualSpace::log_mae;
  if (s == "raw") return ResidualSpace::raw_mae;
  throw ValidationError("--space must be 'log' or 'raw'");
}

std::string path_in(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial Distance toolkit: audit a classifier for high-confidence errors"};
  app.require_subcommand(1);
  std::function<void()> action;

  // generate
  SyntheticSpec spec;
  std::string gen_mechanism = "bias", gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic benchmark as ADT1 files");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--mechanism", gen_mechanism, "none | bias | shift | overfit")->capture_default_str();
  gen->add_option("--bias-fraction", spec.bias_fraction)->capture_default_str();
  gen->add_option("--noise-sd", spec.noise_sd)->capture_default_str();
  gen->add_option("--shift-factor", spec.shift_factor)->capture_default_str();
  gen->add_option("--n-train", spec.n_train)->capture_default_str();
  gen->add_option("--n-val", spec.n_val)->capture_default_str();
  gen->add_option("--n-eval", spec.n_eval)->capture_default_str();
  gen->add_option("--image-side", spec.image_side)->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->callback([&] {
    action = [&] {
      spec.mechanism = parse_mechanism(gen_mechanism);
      const auto bench = generate_synthetic_benchmark(spec);
      std::filesystem::create_directories(gen_out);
      write_dataset(bench.train, path_in(gen_out, "train.adt1"));
      write_dataset(bench.val, path_in(gen_out, "val.adt1"));
      write_dataset(bench.eval, path_in(gen_out, "eval.adt1"));
      write_label_csv(bench.eval, path_in(gen_out, "eval_labels.csv"));
      std::cout << "wrote " << bench.train.size() << "/" << bench.val.size() << "/" << bench.eval.size()
                << " train/val/eval images to " << gen_out << (bench.overtrain ? " (overtrain flag set)" : "") << '\n';
    };
  });

  // train
  std::string train_data, train_out;
  TrainParams tp;
  auto* train = app.add_subcommand("train", "fit the toy logistic classifier");
  train->add_option("--dataset", train_data, "labeled ADT1 training set")->required();
  train->add_option("--out", train_out, "model JSON")->required();
  train->add_option("--epochs", tp.epochs)->capture_default_str();
  train->add_option("--learning-rate", tp.learning_rate)->capture_default_str();
  train->add_option("--seed", tp.seed)->capture_default_str();
  train->add_flag("--overtrain", tp.overtrain, "triple the epochs");
  train->callback([&] {
    action = [&] {
      const auto model = train_toy_classifier(read_dataset(train_data), tp);
      model.save(train_out);
      std::cout << "saved " << train_out << '\n';
    };
  });

  // calibrate
  std::string cal_model, cal_data, cal_out, cal_report;
  std::size_t cal_bins = 10;
  auto* cal = app.add_subcommand("calibrate", "temperature-scale a toy classifier on a validation set");
  cal->add_option("--model", cal_model)->required();
  cal->add_option("--dataset", cal_data, "labeled validation set")->required();
  cal->add_option("--out", cal_out, "calibrated model JSON")->required();
  cal->add_option("--report", cal_report, "reliability CSV of the calibrated model");
  cal->add_option("--bins", cal_bins)->capture_default_str();
  cal->callback([&] {
    action = [&] {
      auto model = ToyClassifier::load(cal_model);
      const Dataset val = read_dataset(cal_data);
      if (!val.has_labels()) throw ValidationError("validation set has no labels");
      std::vector<std::vector<double>> logits;
      for (const auto& img : val.images) logits.push_back(model.logits(img));
      const double lo = model.n_classes() == 2 ? 0.5 : 0.0;
      auto ece = [&](double t) {
        std::vector<Prediction> p;
        for (const auto& z : logits) p.push_back(prediction_from_logits(z, t));
        return reliability(p, *val.true_labels, cal_bins, lo, 1.0);
      };
      const double t = fit_temperature(logits, *val.true_labels);
      const auto before = ece(1.0), after = ece(t);
      model.set_temperature(t);
      model.save(cal_out);
      if (!cal_report.empty()) write_reliability_csv(after, cal_report);
      std::cout << "temperature " << format_real(t) << "  ECE " << format_real(before.ece) << " -> "
                << format_real(after.ece) << "  NLL " << format_real(temperature_nll(logits, *val.true_labels, 1.0))
                << " -> " << format_real(temperature_nll(logits, *val.true_labels, t)) << '\n';
    };
  });

  // predict
  ModelFlags pred_model;
  std::string pred_data, pred_out;
  auto* pred = app.add_subcommand("predict", "score a dataset into a predictions CSV");
  pred_model.add(pred);
  pred->add_option("--dataset", pred_data)->required();
  pred->add_option("--out", pred_out)->required();
  pred->callback([&] {
    action = [&] {
      const auto clf = pred_model.load();
      const Dataset d = read_dataset(pred_data);
      PredictionTable table;
      for (std::size_t i = 0; i < d.size(); ++i) table[d.ids[i]] = clf->predict(d.images[i], d.ids[i]);
      write_predictions_csv(table, pred_out);
      std::cout << "wrote " << table.size() << " predictions to " << pred_out << '\n';
    };
  });

  // attack
  ModelFlags atk_model;
  AttackParams ap;
  std::string atk_data, atk_out, atk_trace, atk_adv;
  Label atk_critical = 1;
  double atk_tau = 0.65;
  bool atk_all = false;
  unsigned atk_workers = 0;
  auto* atk = app.add_subcommand("attack", "boundary-attack eval instances");
  atk_model.add(atk);
  atk->add_option("--dataset", atk_data)->required();
  atk->add_option("--out", atk_out, "attack summary CSV")->required();
  atk->add_option("--trace", atk_trace, "per-step MAE trace CSV");
  atk->add_option("--adversarials", atk_adv, "ADT1 file of adversarial images");
  atk->add_option("--critical-class", atk_critical)->capture_default_str();
  atk->add_option("--tau", atk_tau)->capture_default_str();
  atk->add_flag("--all", atk_all, "attack every instance, not just critical-class ones above tau");
  atk->add_option("--max-queries", ap.max_model_queries)->capture_default_str();
  atk->add_option("--init-trials", ap.init_trials)->capture_default_str();
  atk->add_option("--source-step", ap.source_step)->capture_default_str();
  atk->add_option("--orthogonal-step", ap.orthogonal_step)->capture_default_str();
  atk->add_option("--step-adapt", ap.step_adapt)->capture_default_str();
  atk->add_option("--convergence-delta", ap.convergence_mae_delta)->capture_default_str();
  atk->add_option("--seed", ap.seed)->capture_default_str();
  atk->add_option("--workers", atk_workers, "0 = all cores");
  atk->callback([&] {
    action = [&] {
      const auto clf = atk_model.load();
      const Dataset d = read_dataset(atk_data);
      std::vector<ImageTensor> images, starts;
      std::vector<InstanceId> ids;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const auto p = clf->predict(d.images[i], d.ids[i]);
        if (atk_all || (p.label == atk_critical && p.confidence > atk_tau)) {
          images.push_back(d.images[i]);
          ids.push_back(d.ids[i]);
        }
        if (p.label != atk_critical) starts.push_back(d.images[i]);
      }
      const auto results =
          attack_all(*clf, images, ids, ap, starts, atk_workers == 0 ? default_workers() : atk_workers);
      std::vector<AttackSummary> summaries;
      std::size_t failed = 0;
      for (const auto& r : results) {
        summaries.push_back(r.summary());
        failed += r.summary().finite() ? 0 : 1;
      }
      write_attack_csv(summaries, atk_out);
      if (!atk_trace.empty()) write_attack_trace_csv(results, atk_trace);
      if (!atk_adv.empty()) write_adversarial_images(results, atk_adv);
      std::cout << "attacked " << results.size() << " instances (" << failed << " failed to initialize)\n";
    };
  });

  // advdist
  std::string ad_attacks, ad_preds, ad_out, ad_space = "log";
  AdvDistParams adp;
  auto* ad = app.add_subcommand("advdist", "score attacked instances by Adversarial Distance");
  ad->add_option("--attacks", ad_attacks)->required();
  ad->add_option("--predictions", ad_preds)->required();
  ad->add_option("--out", ad_out)->required();
  ad->add_option("--span", adp.span)->capture_default_str();
  ad->add_option("--degree", adp.degree)->capture_default_str();
  ad->add_option("--space", ad_space, "log | raw")->capture_default_str();
  ad->callback([&] {
    action = [&] {
      adp.space = parse_space(ad_space);
      const auto attacks = read_attack_csv(ad_attacks);
      const auto records = compute_adv_distances(attacks, read_predictions_csv(ad_preds), adp);
      write_advdist_csv(records, ad_out);
      std::cout << "scored " << records.size() << " of " << attacks.size() << " attacked instances\n";
    };
  });

  // search
  std::string s_data, s_preds, s_adv, s_labels, s_strategy = "advdist", s_out;
  std::size_t s_budget = 50, s_pca = kDefaultPcaComponents;
  std::uint64_t s_seed = 0;
  Label s_critical = 1;
  double s_tau = 0.65;
  auto* srch = app.add_subcommand("search", "run one search against a ground-truth label file");
  srch->add_option("--dataset", s_data, "eval ADT1 (for PCA features)")->required();
  srch->add_option("--predictions", s_preds)->required();
  srch->add_option("--advdist", s_adv, "advdist CSV (needed for --strategy advdist)");
  srch->add_option("--labels", s_labels, "id,true_label CSV; defaults to the dataset's labels");
  srch->add_option("--strategy", s_strategy)->capture_default_str();
  srch->add_option("--budget", s_budget)->capture_default_str();
  srch->add_option("--seed", s_seed)->capture_default_str();
  srch->add_option("--critical-class", s_critical)->capture_default_str();
  srch->add_option("--tau", s_tau)->capture_default_str();
  srch->add_option("--pca-components", s_pca)->capture_default_str();
  srch->add_option("--out", s_out, "session trace CSV")->required();
  srch->callback([&] {
    action = [&] {
      const Strategy strategy = parse_strategy(s_strategy);
      if (strategy == Strategy::advdist && s_adv.empty()) throw ValidationError("--strategy advdist needs --advdist");
      const Dataset d = read_dataset(s_data);
      std::map<InstanceId, Label> truth;
      if (!s_labels.empty()) {
        truth = read_label_csv(s_labels);
      } else {
        if (!d.has_labels()) throw ValidationError("dataset has no labels; pass --labels");
        for (std::size_t i = 0; i < d.size(); ++i) truth[d.ids[i]] = (*d.true_labels)[i];
      }
      const auto adv = s_adv.empty() ? std::vector<AdvDistRecord>{} : read_advdist_csv(s_adv);
      auto pool = make_audit_pool(d, read_predictions_csv(s_preds), adv, s_critical, s_tau, s_pca);
      GroundTruthOracle oracle(std::move(truth));
      const auto session = run_search(pool, strategy, oracle, s_budget, s_seed);
      write_session_trace(session, s_out);
      const double sdr = session.per_step.empty() ? 0.0 : session.per_step.back().sdr;
      std::cout << to_string(strategy) << ": " << session.queried.size() << " queries, "
                << session.discovered_errors.size() << " errors, SDR " << format_real(sdr)
                << (session.truncated ? " (budget truncated to the pool size)" : "")
                << (session.aborted ? " (aborted: " + session.abort_reason + ")" : "") << '\n';
      if (session.aborted) throw LookupError(session.abort_reason);
    };
  });

  // experiment
  std::string x_config, x_out, x_strategies;
  bool x_desk = false, x_simulate = false;
  std::optional<std::uint64_t> x_seed;
  std::optional<std::size_t> x_budget, x_reps, x_subset;
  std::optional<double> x_tau, x_span;
  unsigned x_workers = 0;
  auto* xp = app.add_subcommand("experiment", "replicated audit protocol with aggregated curves");
  xp->add_option("--config", x_config, "key = value config file");
  xp->add_flag("--desk", x_desk, "100 replications of 500-instance subsets");
  xp->add_flag("--simulate-calibrated", x_simulate, "calibrated-oracle simulation instead of a benchmark");
  xp->add_option("--seed", x_seed);
  xp->add_option("--budget", x_budget);
  xp->add_option("--replications", x_reps);
  xp->add_option("--subset-size", x_subset);
  xp->add_option("--tau", x_tau);
  xp->add_option("--span", x_span);
  xp->add_option("--strategy", x_strategies, "comma-separated strategies or 'all'");
  xp->add_option("--workers", x_workers, "0 = all cores");
  xp->add_option("--out", x_out, "result directory");
  xp->callback([&] {
    action = [&] {
      if (x_simulate) {
        CalibratedSimulationConfig sc;
        if (x_seed) sc.seed = *x_seed;
        if (x_budget) sc.budget = *x_budget;
        if (x_reps) sc.replications = *x_reps;
        if (x_subset) sc.pool_size = *x_subset;
        if (!x_strategies.empty()) sc.strategies = parse_strategy_list(x_strategies);
        sc.workers = x_workers;
        const auto res = run_calibrated_simulation(sc);
        if (!x_out.empty()) emit_reports(res.curves, x_out);
        for (const auto& c : res.curves.strategies) {
          const auto& last = c.metric("sdr").back();
          std::cout << to_string(c.strategy) << ": mean SDR at step " << c.budget << " = " << format_real(last.mean)
                    << " (SE " << format_real(last.se) << ")\n";
        }
        return;
      }
      ExperimentConfig c = x_config.empty() ? ExperimentConfig{} : read_config_file(x_config);
      if (x_config.empty()) c.synthetic.emplace();
      if (x_desk) c.apply_desk();
      if (x_seed) c.seed = *x_seed;
      if (x_budget) c.budget = *x_budget;
      if (x_reps) c.replications = *x_reps;
      if (x_subset) c.subset_size = *x_subset;
      if (x_tau) c.tau = *x_tau;
      if (x_span) c.loess.span = *x_span;
      if (!x_strategies.empty()) c.strategies = parse_strategy_list(x_strategies);
      if (x_workers != 0) c.workers = x_workers;
      if (!x_out.empty()) c.out_dir = x_out;
      const auto inputs = prepare_inputs(c);
      const auto res = run_experiment(c, inputs);
      write_experiment_outputs(c, res);
      for (const auto& n : res.notes()) std::cout << n << '\n';
      for (const auto& s : res.curves.strategies) {
        const auto& last = s.metric("sdr").back();
        std::cout << to_string(s.strategy) << ": mean SDR at step " << s.budget << " = " << format_real(last.mean)
                  << " (SE " << format_real(last.se) << ")\n";
      }
    };
  });

  // serve
  std::string v_data, v_preds, v_adv, v_names = "0,1", v_host = "127.0.0.1", v_traces;
  int v_port = 8080;
  Label v_critical = 1;
  double v_tau = 0.65;
  std::size_t v_pca = kDefaultPcaComponents;
  auto* srv = app.add_subcommand("serve", "serve live audit sessions over HTTP/JSON");
  srv->add_option("--dataset", v_data)->required();
  srv->add_option("--predictions", v_preds)->required();
  srv->add_option("--advdist", v_adv);
  srv->add_option("--class-names", v_names)->capture_default_str();
  srv->add_option("--critical-class", v_critical)->capture_default_str();
  srv->add_option("--tau", v_tau)->capture_default_str();
  srv->add_option("--pca-components", v_pca)->capture_default_str();
  srv->add_option("--host", v_host)->capture_default_str();
  srv->add_option("--port", v_port)->capture_default_str();
  srv->add_option("--traces", v_traces, "directory for per-session trace files");
  srv->callback([&] {
    action = [&] {
      const Dataset d = read_dataset(v_data);
      const auto adv = v_adv.empty() ? std::vector<AdvDistRecord>{} : read_advdist_csv(v_adv);
      auto pool = make_audit_pool(d, read_predictions_csv(v_preds), adv, v_critical, v_tau, v_pca);
      std::map<InstanceId, ImageTensor> images;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (pool->contains(d.ids[i])) images.emplace(d.ids[i], d.images[i]);
      SessionManager manager(pool, std::move(images), split_names(v_names), v_traces);
      if (const auto n = manager.restore(); n > 0) std::cout << "restored " << n << " sessions\n";
      SessionServer server(manager);
      std::cout << "serving " << pool->size() << " instances on http://" << v_host << ":" << v_port << std::endl;
      server.run(v_host, v_port);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advdist/attack/boundary_attack.hpp"
#include "advdist/classifier/cached_classifier.hpp"
#include "advdist/common/csv.hpp"
#include "advdist/distance/loess.hpp"

namespace advdist {

inline constexpr double kMaeFloor = 1e-12;

/// Space in which the expected-perturbation curve is fitted and residuals taken.
enum class ResidualSpace { log_mae, raw_mae };

struct AdvDistParams {
  double span = 0.75;
  int degree = 1;
  ResidualSpace space = ResidualSpace::log_mae;
};

/// One instance's Adversarial Distance. In raw_mae mode `expected_log_mae`
/// holds the expected raw MAE and `adv_dist` the raw residual.
struct AdvDistRecord {
  InstanceId instance_id = 0;
  double confidence = 0.0;
  double mae = 0.0;
  double log_mae = 0.0;
  double expected_log_mae = 0.0;
  double adv_dist = 0.0;

  bool operator==(const AdvDistRecord&) const = default;
};

inline double log_mae(double mae) { return std::log(std::max(mae, kMaeFloor)); }

/// Ascending adv_dist, ties by lowest id (the order the search consumes them in).
inline void sort_by_adv_dist(std::vector<AdvDistRecord>& records) {
  std::sort(records.begin(), records.end(), [](const AdvDistRecord& a, const AdvDistRecord& b) {
    return a.adv_dist < b.adv_dist || (a.adv_dist == b.adv_dist && a.instance_id < b.instance_id);
  });
}

/// Fits the expected perturbation as a LOESS curve over confidence using every
/// finite-MAE instance, then scores each as observed minus expected.
/// Instances whose attack failed (+inf MAE) are omitted.
inline std::vector<AdvDistRecord> compute_adv_distances(std::span<const AttackSummary> attacks,
                                                        const PredictionTable& predictions,
                                                        const AdvDistParams& params = {}) {
  std::vector<AdvDistRecord> records;
  std::vector<Point2> points;
  for (const auto& a : attacks) {
    auto it = predictions.find(a.id);
    if (it == predictions.end()) throw LookupError("no prediction for attacked instance " + std::to_string(a.id));
    if (!a.finite()) continue;
    AdvDistRecord r;
    r.instance_id = a.id;
    r.confidence = it->second.confidence;
    r.mae = a.final_mae;
    r.log_mae = log_mae(a.final_mae);
    records.push_back(r);
    points.push_back({r.confidence, params.space == ResidualSpace::log_mae ? r.log_mae : r.mae});
  }
  if (records.size() < static_cast<std::size_t>(params.degree + 1))
    throw ValidationError("need at least " + std::to_string(params.degree + 1) +
                          " finite-MAE instances to fit the expected perturbation, got " +
                          std::to_string(records.size()));
  const LoessModel model = fit_loess(points, params.span, params.degree);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.expected_log_mae = model.predict(r.confidence);
    r.adv_dist = points[i].y - r.expected_log_mae;
  }
  sort_by_adv_dist(records);
  return records;
}

inline void write_advdist_csv(std::vector<AdvDistRecord> records, const std::string& path) {
  sort_by_adv_dist(records);
  auto out = open_for_write(path);
  out << "id,confidence,mae,log_mae,expected_log_mae,adv_dist\n";
  for (const auto& r : records)
    out << r.instance_id << ',' << format_real(r.confidence) << ',' << format_real(r.mae) << ','
        << format_real(r.log_mae) << ',' << format_real(r.expected_log_mae) << ',' << format_real(r.adv_dist) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<AdvDistRecord> read_advdist_csv(const std::string& path) {
  CsvTable t = read_csv_file(path);
  const int id = t.require_column("id", path);
  const int c = t.require_column("confidence", path);
  const int m = t.require_column("mae", path);
  const int lm = t.require_column("log_mae", path);
  const int e = t.require_column("expected_log_mae", path);
  const int a = t.require_column("adv_dist", path);
  std::vector<AdvDistRecord> out;
  for (const auto& row : t.rows)
    out.push_back({parse_int<InstanceId>(row[id], "id"), parse_real(row[c]), parse_real(row[m]), parse_real(row[lm]),
                   parse_real(row[e]), parse_real(row[a])});
  return out;
}

}  // namespace advdist

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advdist/classifier/reliability.hpp"
#include "advdist/common/csv.hpp"
#include "advdist/search/search.hpp"

namespace advdist {

inline constexpr std::array<const char*, 4> kCurveMetrics{"sdr", "spread", "bw_utility", "errors_found"};

struct CurvePoint {
  double mean = 0.0;
  double se = 0.0;
  /// Sessions contributing a finite value at this step.
  std::size_t n = 0;
};

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  std::size_t count = 0;
};

struct StrategyCurves {
  Strategy strategy = Strategy::random;
  std::size_t budget = 0;
  std::size_t sessions = 0;
  std::map<std::string, std::vector<CurvePoint>> metrics;
  BoxStats confidence;

  const std::vector<CurvePoint>& metric(const std::string& name) const {
    auto it = metrics.find(name);
    if (it == metrics.end()) throw LookupError("no curve for metric '" + name + "'");
    return it->second;
  }
  /// Mean at 1-based step.
  double mean_at(const std::string& name, std::size_t step) const { return metric(name).at(step - 1).mean; }
};

struct AggregateCurves {
  std::vector<StrategyCurves> strategies;

  const StrategyCurves& of(Strategy s) const {
    for (const auto& c : strategies)
      if (c.strategy == s) return c;
    throw LookupError("no curves for strategy " + to_string(s));
  }
};

/// Mean and standard error (sample sd / sqrt(n)) of the finite values.
inline CurvePoint mean_se(std::span<const double> values) {
  CurvePoint p;
  double sum = 0.0;
  for (double v : values)
    if (std::isfinite(v)) {
      sum += v;
      ++p.n;
    }
  if (p.n == 0) {
    p.mean = p.se = std::numeric_limits<double>::quiet_NaN();
    return p;
  }
  p.mean = sum / static_cast<double>(p.n);
  if (p.n > 1) {
    double ss = 0.0;
    for (double v : values)
      if (std::isfinite(v)) ss += (v - p.mean) * (v - p.mean);
    p.se = std::sqrt(ss / static_cast<double>(p.n - 1)) / std::sqrt(static_cast<double>(p.n));
  }
  return p;
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BoxStats box_stats(std::vector<double> values) {
  BoxStats b;
  b.count = values.size();
  if (values.empty()) {
    b.min = b.q1 = b.median = b.q3 = b.max = std::numeric_limits<double>::quiet_NaN();
    return b;
  }
  std::sort(values.begin(), values.end());
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile_sorted(values, 0.25);
  b.median = quantile_sorted(values, 0.5);
  b.q3 = quantile_sorted(values, 0.75);
  return b;
}

inline double step_metric(const StepMetrics& m, std::size_t which) {
  switch (which) {
    case 0: return m.sdr;
    case 1: return m.spread;
    case 2: return m.bw_utility;
    default: return static_cast<double>(m.errors_found);
  }
}

/// Pointwise mean/SE per strategy and step. Sessions shorter than their budget
/// (truncated or aborted) simply stop contributing after their last step.
inline AggregateCurves aggregate(std::span<const SearchSession> sessions) {
  std::vector<Strategy> order;
  std::map<Strategy, std::vector<const SearchSession*>> groups;
  for (const auto& s : sessions) {
    auto& g = groups[s.strategy];
    if (g.empty()) order.push_back(s.strategy);
    if (!g.empty() && g.front()->budget != s.budget)
      throw ValidationError("sessions of strategy " + to_string(s.strategy) + " mix budgets " +
                            std::to_string(g.front()->budget) + " and " + std::to_string(s.budget));
    g.push_back(&s);
  }
  AggregateCurves out;
  for (auto strategy : order) {
    const auto& g = groups[strategy];
    StrategyCurves c;
    c.strategy = strategy;
    c.budget = g.front()->budget;
    c.sessions = g.size();
    std::vector<double> confs;
    for (const auto* s : g)
      for (const auto& q : s->queried) confs.push_back(q.confidence);
    c.confidence = box_stats(std::move(confs));
    for (std::size_t m = 0; m < kCurveMetrics.size(); ++m) {
      auto& curve = c.metrics[kCurveMetrics[m]];
      std::vector<double> values;
      for (std::size_t step = 0; step < c.budget; ++step) {
        values.clear();
        for (const auto* s : g)
          if (step < s->per_step.size()) values.push_back(step_metric(s->per_step[step], m));
        curve.push_back(mean_se(values));
      }
    }
    out.strategies.push_back(std::move(c));
  }
  return out;
}

inline void write_curves_csv(const AggregateCurves& curves, const std::string& path) {
  auto out = open_for_write(path);
  out << "strategy,step,metric,mean,se\n";
  for (const auto& c : curves.strategies)
    for (const char* metric : kCurveMetrics) {
      const auto& curve = c.metric(metric);
      for (std::size_t i = 0; i < curve.size(); ++i)
        out << to_string(c.strategy) << ',' << i + 1 << ',' << metric << ',' << format_real(curve[i].mean) << ','
            << format_real(curve[i].se) << '\n';
    }
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Parses curves.csv back (means and SEs; counts and box stats are not stored there).
inline AggregateCurves read_curves_csv(const std::string& path) {
  CsvTable t = read_csv_file(path);
  const int s = t.require_column("strategy", path), st = t.require_column("step", path),
            m = t.require_column("metric", path), mean = t.require_column("mean", path),
            se = t.require_column("se", path);
  AggregateCurves out;
  std::map<Strategy, std::size_t> index;
  for (const auto& row : t.rows) {
    const Strategy strategy = parse_strategy(row[s]);
    auto [it, fresh] = index.emplace(strategy, out.strategies.size());
    if (fresh) {
      out.strategies.emplace_back();
      out.strategies.back().strategy = strategy;
    }
    auto& c = out.strategies[it->second];
    const auto step = parse_int<std::size_t>(row[st], "step");
    auto& curve = c.metrics[row[m]];
    if (step != curve.size() + 1) throw FormatError(path + ": steps out of order for " + row[s] + "/" + row[m]);
    curve.push_back({parse_real(row[mean]), parse_real(row[se]), 0});
    c.budget = std::max(c.budget, step);
  }
  return out;
}

inline void write_confidence_box_csv(const AggregateCurves& curves, const std::string& path) {
  auto out = open_for_write(path);
  out << "strategy,count,min,q1,median,q3,max\n";
  for (const auto& c : curves.strategies) {
    const auto& b = c.confidence;
    out << to_string(c.strategy) << ',' << b.count << ',' << format_real(b.min) << ',' << format_real(b.q1) << ','
        << format_real(b.median) << ',' << format_real(b.q3) << ',' << format_real(b.max) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline void write_reliability_csv(const ReliabilityReport& r, const std::string& path) {
  auto out = open_for_write(path);
  out << "lower,upper,count,mean_confidence,accuracy\n";
  for (const auto& b : r.bins)
    out << format_real(b.lower) << ',' << format_real(b.upper) << ',' << b.count << ','
        << format_real(b.mean_confidence) << ',' << format_real(b.accuracy) << '\n';
  out << "# ece," << format_real(r.ece) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// curves.csv, confidence_box.csv, reliability.csv (when given) and summary.txt.
inline void emit_reports(const AggregateCurves& curves, const std::string& out_dir,
                         const std::optional<ReliabilityReport>& reliability_report = std::nullopt,
                         const std::vector<std::string>& notes = {}) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  const std::filesystem::path dir(out_dir);
  write_curves_csv(curves, (dir / "curves.csv").string());
  write_confidence_box_csv(curves, (dir / "confidence_box.csv").string());
  if (reliability_report) write_reliability_csv(*reliability_report, (dir / "reliability.csv").string());

  auto out = open_for_write((dir / "summary.txt").string());
  for (const auto& n : notes) out << n << '\n';
  if (!notes.empty()) out << '\n';
  out << "strategy        sessions  final_step  sdr_mean  sdr_se    errors_mean  spread_mean\n";
  for (const auto& c : curves.strategies) {
    if (c.budget == 0) continue;
    const auto& sdr = c.metric("sdr").back();
    char line[256];
    std::snprintf(line, sizeof line, "%-15s %8zu  %10zu  %8.4f  %8.4f  %11.3f  %11.4f\n", to_string(c.strategy).c_str(),
                  c.sessions, c.budget, sdr.mean, sdr.se, c.metric("errors_found").back().mean,
                  c.metric("spread").back().mean);
    out << line;
  }
  if (reliability_report) out << "\nclassifier ECE on the eval set: " << format_real(reliability_report->ece) << '\n';
  out.flush();
  if (!out) throw IoError("failed writing summary in '" + out_dir + "'");
}

}  // namespace advdist

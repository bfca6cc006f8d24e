#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "advdist/common/csv.hpp"
#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/search/oracle.hpp"
#include "advdist/search/strategies.hpp"

namespace advdist {

struct QueriedItem {
  InstanceId instance_id = 0;
  double confidence = 1.0;
  Label predicted_label = 0;
  Label oracle_label = 0;
  bool is_error = false;

  bool operator==(const QueriedItem&) const = default;
};

struct StepMetrics {
  std::size_t step = 0;
  double sdr = 0.0;
  double spread = 0.0;
  double bw_utility = 0.0;
  std::size_t errors_found = 0;

  bool operator==(const StepMetrics&) const = default;
};

struct SearchSession {
  Strategy strategy = Strategy::random;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  std::vector<QueriedItem> queried;
  std::set<InstanceId> discovered_errors;
  std::vector<StepMetrics> per_step;
  /// Budget exceeded the pool; the session stops when the pool runs out.
  bool truncated = false;
  /// The oracle failed; everything before the failure is kept.
  bool aborted = false;
  std::string abort_reason;

  bool operator==(const SearchSession&) const = default;
};

/// One search, advanced one oracle answer at a time. `propose` surfaces the
/// next query and keeps returning it until `record` receives its label, which
/// is what lets a remote (human) oracle drive the same state machine that
/// run_search drives with an in-process oracle.
class Searcher {
public:
  static constexpr std::uint64_t kClusterStream = 0x636c7573;

  Searcher(std::shared_ptr<const SearchPool> pool, Strategy strategy, std::size_t budget, std::uint64_t seed)
      : pool_(std::move(pool)), rng_(seed), queried_mask_(pool_->size(), false),
        min_d2_(pool_->size(), std::numeric_limits<double>::infinity()), cover_(pool_->size(), 0.0) {
    if (budget == 0) throw ValidationError("budget must be a positive integer");
    session_.strategy = strategy;
    session_.budget = budget;
    session_.seed = seed;
    session_.truncated = budget > pool_->size();
    if (strategy == Strategy::bandit || strategy == Strategy::coverage) {
      auto clusters = ClusterIndex::build(pool_->features, kDefaultClusters, derive_seed(seed, kClusterStream));
      if (strategy == Strategy::bandit)
        bandit_.emplace(std::move(clusters));
      else
        coverage_.emplace(std::move(clusters), pool_->size(), pool_->sigma);
    }
  }

  const SearchSession& session() const noexcept { return session_; }
  const SearchPool& pool() const noexcept { return *pool_; }
  const std::optional<BanditState>& bandit() const noexcept { return bandit_; }
  const std::optional<CoverageState>& coverage() const noexcept { return coverage_; }

  std::size_t effective_budget() const noexcept { return std::min(session_.budget, pool_->size()); }
  bool done() const noexcept { return session_.aborted || session_.queried.size() >= effective_budget(); }
  std::optional<InstanceId> pending() const noexcept { return pending_; }

  InstanceId propose() {
    if (pending_) return *pending_;
    if (done()) throw ExhaustionError("search budget exhausted");
    std::size_t idx = 0;
    switch (session_.strategy) {
      case Strategy::advdist: idx = pool_->index_of(advdist_next(pool_->records, queried_)); break;
      case Strategy::low_confidence: idx = pool_->index_of(low_confidence_next(pool_->records, queried_)); break;
      case Strategy::random: idx = pool_->index_of(random_next(pool_->records, queried_, rng_)); break;
      case Strategy::bandit: idx = bandit_next(*bandit_, queried_mask_, rng_); break;
      case Strategy::coverage: idx = coverage_next(*coverage_, *pool_, queried_mask_, rng_); break;
    }
    pending_ = pool_->records[idx].instance_id;
    return *pending_;
  }

  /// Records the oracle's answer for the pending query and returns the new step.
  StepMetrics record(InstanceId id, Label oracle_label) {
    if (!pending_) throw ConflictError("no query is pending");
    if (id != *pending_)
      throw ConflictError("instance " + std::to_string(id) + " is not the pending query (" +
                          std::to_string(*pending_) + ")");
    const std::size_t idx = pool_->index_of(id);
    const auto& rec = pool_->records[idx];
    const bool is_error = oracle_label != rec.predicted_label;
    pending_.reset();
    queried_.insert(id);
    queried_mask_[idx] = true;
    session_.queried.push_back({id, rec.confidence, rec.predicted_label, oracle_label, is_error});
    if (is_error) session_.discovered_errors.insert(id);

    if (bandit_) bandit_->update(bandit_->clusters.cluster_of[idx], is_error);
    if (coverage_) coverage_->update(*pool_, idx, is_error);

    expected_errors_ += 1.0 - rec.confidence;
    const auto& q = pool_->features[idx];
    const double s2 = pool_->sigma * pool_->sigma;
    double spread_sum = 0.0, utility = 0.0;
    for (std::size_t x = 0; x < pool_->size(); ++x) {
      const double d2 = squared_distance(pool_->features[x], q);
      min_d2_[x] = std::min(min_d2_[x], d2);
      spread_sum += std::sqrt(min_d2_[x]);
      if (is_error) cover_[x] = std::max(cover_[x], std::exp(-d2 / s2));
      utility += pool_->records[x].confidence * cover_[x];
    }
    StepMetrics m;
    m.step = session_.queried.size();
    m.errors_found = session_.discovered_errors.size();
    m.sdr = expected_errors_ > 0.0 ? static_cast<double>(m.errors_found) / expected_errors_
                                   : std::numeric_limits<double>::quiet_NaN();
    m.spread = spread_sum / static_cast<double>(pool_->size());
    m.bw_utility = utility;
    session_.per_step.push_back(m);
    return m;
  }

  void abort(std::string reason) {
    pending_.reset();
    session_.aborted = true;
    session_.abort_reason = std::move(reason);
  }

private:
  std::shared_ptr<const SearchPool> pool_;
  Rng rng_;
  SearchSession session_;
  QueriedSet queried_;
  std::vector<bool> queried_mask_;
  std::optional<InstanceId> pending_;
  std::optional<BanditState> bandit_;
  std::optional<CoverageState> coverage_;
  double expected_errors_ = 0.0;
  std::vector<double> min_d2_;
  std::vector<double> cover_;
};

/// Runs a search to its budget (or the pool size) against an in-process oracle.
/// An oracle exception aborts the session and keeps the steps taken so far.
inline SearchSession run_search(std::shared_ptr<const SearchPool> pool, Strategy strategy, Oracle& oracle,
                                std::size_t budget, std::uint64_t seed) {
  Searcher s(std::move(pool), strategy, budget, seed);
  while (!s.done()) {
    const InstanceId id = s.propose();
    Label label = 0;
    try {
      label = oracle.label(id);
    } catch (const std::exception& e) {
      s.abort(std::string("oracle failed on instance ") + std::to_string(id) + ": " + e.what());
      break;
    }
    s.record(id, label);
  }
  return s.session();
}

inline SearchSession run_search(const SearchPool& pool, Strategy strategy, Oracle& oracle, std::size_t budget,
                                std::uint64_t seed) {
  return run_search(std::make_shared<const SearchPool>(pool), strategy, oracle, budget, seed);
}

inline constexpr const char* kTraceHeader =
    "step,instance_id,confidence,oracle_label,predicted_label,is_error,sdr,spread,bw_utility,errors_found";

inline void write_trace_rows(std::ostream& out, const SearchSession& s) {
  for (std::size_t i = 0; i < s.per_step.size(); ++i) {
    const auto& q = s.queried[i];
    const auto& m = s.per_step[i];
    out << m.step << ',' << q.instance_id << ',' << format_real(q.confidence) << ',' << q.oracle_label << ','
        << q.predicted_label << ',' << (q.is_error ? 1 : 0) << ',' << format_real(m.sdr) << ','
        << format_real(m.spread) << ',' << format_real(m.bw_utility) << ',' << m.errors_found << '\n';
  }
}

inline void write_session_trace(const SearchSession& s, const std::string& path) {
  auto out = open_for_write(path);
  out << kTraceHeader << '\n';
  write_trace_rows(out, s);
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Parses a trace back into (queried, per_step); strategy/budget/seed are not
/// part of the trace.
inline SearchSession read_session_trace(const std::string& path) {
  CsvTable t = read_csv_file(path);
  const int step = t.require_column("step", path), id = t.require_column("instance_id", path),
            conf = t.require_column("confidence", path), ol = t.require_column("oracle_label", path),
            pl = t.require_column("predicted_label", path), err = t.require_column("is_error", path),
            sdr = t.require_column("sdr", path), spr = t.require_column("spread", path),
            bw = t.require_column("bw_utility", path), ef = t.require_column("errors_found", path);
  SearchSession s;
  for (const auto& row : t.rows) {
    QueriedItem q{parse_int<InstanceId>(row[id], "instance_id"), parse_real(row[conf]), parse_int<Label>(row[pl], "predicted_label"),
                  parse_int<Label>(row[ol], "oracle_label"), parse_int<int>(row[err], "is_error") != 0};
    s.queried.push_back(q);
    if (q.is_error) s.discovered_errors.insert(q.instance_id);
    s.per_step.push_back({parse_int<std::size_t>(row[step], "step"), parse_real(row[sdr]), parse_real(row[spr]),
                          parse_real(row[bw]), parse_int<std::size_t>(row[ef], "errors_found")});
  }
  s.budget = s.queried.size();
  return s;
}

}  // namespace advdist

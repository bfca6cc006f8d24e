#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "advdist/attack/boundary_attack.hpp"
#include "advdist/common/csv.hpp"
#include "advdist/common/parallel.hpp"
#include "advdist/data/adt1.hpp"

namespace advdist {

/// Attacks every image concurrently, one independent seeded stream per id.
/// Initialization failures become +inf sentinels; results come back in input order.
inline std::vector<AttackResult> attack_all(const BlackBoxClassifier& classifier, std::span<const ImageTensor> images,
                                            std::span<const InstanceId> ids, const AttackParams& params,
                                            std::span<const ImageTensor> starting_points = {},
                                            unsigned workers = default_workers()) {
  if (images.size() != ids.size()) throw ShapeError("image and id counts differ");
  params.validate();
  std::vector<AttackResult> out(images.size());
  parallel_for(
      images.size(),
      [&](std::size_t i) {
        try {
          out[i] = boundary_attack(classifier, images[i], params, ids[i], starting_points);
        } catch (const InitFailure&) {
          out[i] = failed_attack(ids[i], images[i], params.init_trials);
        }
      },
      workers);
  return out;
}

inline void write_attack_csv(std::span<const AttackSummary> attacks, const std::string& path) {
  auto out = open_for_write(path);
  out << "id,final_mae,queries_used,converged\n";
  for (const auto& a : attacks)
    out << a.id << ',' << format_real(a.final_mae) << ',' << a.queries_used << ',' << (a.converged ? 1 : 0) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<AttackSummary> read_attack_csv(const std::string& path) {
  CsvTable t = read_csv_file(path);
  const int id = t.require_column("id", path);
  const int m = t.require_column("final_mae", path);
  const int q = t.require_column("queries_used", path);
  const int c = t.require_column("converged", path);
  std::vector<AttackSummary> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows)
    out.push_back({parse_int<InstanceId>(row[id], "id"), parse_real(row[m], "final_mae"),
                   parse_int<std::size_t>(row[q], "queries_used"), parse_int<int>(row[c], "converged") != 0});
  return out;
}

inline void write_attack_trace_csv(std::span<const AttackResult> attacks, const std::string& path) {
  auto out = open_for_write(path);
  out << "id,query_index,mae\n";
  for (const auto& a : attacks)
    for (const auto& p : a.trace) out << a.instance_id << ',' << p.query_index << ',' << format_real(p.mae) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Adversarial images as an ADT1 file, sorted by instance id.
inline void write_adversarial_images(std::span<const AttackResult> attacks, const std::string& path) {
  std::vector<const AttackResult*> sorted;
  for (const auto& a : attacks) sorted.push_back(&a);
  std::sort(sorted.begin(), sorted.end(),
            [](const AttackResult* a, const AttackResult* b) { return a->instance_id < b->instance_id; });
  Dataset d;
  for (const auto* a : sorted) {
    d.images.push_back(a->adversarial);
    d.ids.push_back(a->instance_id);
  }
  write_dataset(d, path);
}

}  // namespace advdist

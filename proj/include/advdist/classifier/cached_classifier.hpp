#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advdist/classifier/classifier.hpp"
#include "advdist/common/csv.hpp"
#include "advdist/common/errors.hpp"

namespace advdist {

using PredictionTable = std::map<InstanceId, Prediction>;

/// Reads `id,predicted_label,confidence[,logit_0,...,logit_{k-1}]`.
inline PredictionTable read_predictions_csv(const std::string& path) {
  CsvTable t = read_csv_file(path);
  const int id_col = t.require_column("id", path);
  const int label_col = t.require_column("predicted_label", path);
  const int conf_col = t.require_column("confidence", path);
  std::vector<int> logit_cols;
  for (int k = 0;; ++k) {
    int c = t.column("logit_" + std::to_string(k));
    if (c < 0) break;
    logit_cols.push_back(c);
  }
  PredictionTable out;
  for (const auto& row : t.rows) {
    Prediction p;
    const auto id = parse_int<InstanceId>(row[id_col], "id");
    p.label = parse_int<Label>(row[label_col], "predicted_label");
    p.confidence = parse_real(row[conf_col], "confidence");
    if (!(p.confidence > 0.0 && p.confidence <= 1.0))
      throw FormatError(path + ": confidence of id " + std::to_string(id) + " outside (0,1]");
    if (!logit_cols.empty()) {
      std::vector<double> z;
      for (int c : logit_cols) z.push_back(parse_real(row[c], "logit"));
      p.logits = std::move(z);
    }
    if (!out.emplace(id, std::move(p)).second) throw FormatError(path + ": duplicate id " + std::to_string(id));
  }
  return out;
}

inline void write_predictions_csv(const PredictionTable& preds, const std::string& path) {
  std::size_t n_logits = 0;
  bool all_logits = !preds.empty();
  for (const auto& [id, p] : preds) {
    if (!p.logits) {
      all_logits = false;
      break;
    }
    n_logits = p.logits->size();
  }
  auto out = open_for_write(path);
  out << "id,predicted_label,confidence";
  if (all_logits)
    for (std::size_t k = 0; k < n_logits; ++k) out << ",logit_" << k;
  out << '\n';
  for (const auto& [id, p] : preds) {
    out << id << ',' << p.label << ',' << format_real(p.confidence);
    if (all_logits)
      for (double z : *p.logits) out << ',' << format_real(z);
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Replays stored predictions by instance id. It cannot score novel pixels,
/// so it cannot be attacked.
class CachedClassifier final : public BlackBoxClassifier {
public:
  explicit CachedClassifier(PredictionTable table, std::size_t n_classes = 0) : table_(std::move(table)) {
    n_classes_ = n_classes;
    if (n_classes_ == 0) {
      for (const auto& [id, p] : table_) {
        n_classes_ = std::max<std::size_t>(n_classes_, static_cast<std::size_t>(p.label) + 1);
        if (p.logits) n_classes_ = std::max(n_classes_, p.logits->size());
      }
      n_classes_ = std::max<std::size_t>(n_classes_, 2);
    }
  }

  static CachedClassifier from_file(const std::string& path) { return CachedClassifier(read_predictions_csv(path)); }

  std::size_t n_classes() const override { return n_classes_; }
  bool is_live() const override { return false; }
  const PredictionTable& table() const noexcept { return table_; }

protected:
  Prediction do_predict(const ImageTensor&, std::optional<InstanceId> id) const override {
    if (!id) throw UnsupportedOperation("cached classifier cannot score novel pixels");
    auto it = table_.find(*id);
    if (it == table_.end()) throw LookupError("no cached prediction for instance " + std::to_string(*id));
    return it->second;
  }

private:
  PredictionTable table_;
  std::size_t n_classes_ = 0;
};

}  // namespace advdist

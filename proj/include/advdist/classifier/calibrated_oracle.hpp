#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "advdist/common/errors.hpp"
#include "advdist/common/rng.hpp"
#include "advdist/search/oracle.hpp"

namespace advdist {

/// Simulated perfectly calibrated model: instance i is predicted `predicted`
/// with confidence c_i, and its true label equals the prediction with
/// probability exactly c_i. Each answer is drawn from a per-id stream, so it is
/// stable across calls and independent of query order.
class CalibratedSyntheticOracle final : public Oracle {
public:
  struct Instance {
    double confidence;
    Label predicted;
  };

  CalibratedSyntheticOracle(std::map<InstanceId, Instance> instances, std::uint64_t seed, std::size_t n_classes = 2)
      : instances_(std::move(instances)), seed_(seed), n_classes_(n_classes) {
    if (n_classes_ < 2) throw ValidationError("calibrated oracle needs at least two classes");
    for (const auto& [id, inst] : instances_)
      if (!(inst.confidence > 0.0 && inst.confidence <= 1.0))
        throw ValidationError("confidence of instance " + std::to_string(id) + " outside (0,1]");
  }

  bool is_correct(InstanceId id) const {
    const auto& inst = find(id);
    Rng rng(derive_seed(seed_, id));
    return uniform01(rng) < inst.confidence;
  }

  Label label(InstanceId id) override {
    const auto& inst = find(id);
    if (is_correct(id)) return inst.predicted;
    return static_cast<Label>((static_cast<std::size_t>(inst.predicted) + 1) % n_classes_);
  }

  const std::map<InstanceId, Instance>& instances() const noexcept { return instances_; }

private:
  const Instance& find(InstanceId id) const {
    auto it = instances_.find(id);
    if (it == instances_.end()) throw LookupError("calibrated oracle has no instance " + std::to_string(id));
    return it->second;
  }

  std::map<InstanceId, Instance> instances_;
  std::uint64_t seed_;
  std::size_t n_classes_;
};

}  // namespace advdist

#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>

#include "advdist/common/errors.hpp"
#include "advdist/data/image.hpp"

namespace advdist {

/// Source of true labels, queried at unit cost per instance.
class Oracle {
public:
  virtual ~Oracle() = default;
  virtual Label label(InstanceId id) = 0;
};

/// Answers from a ground-truth table (e.g. an `id,true_label` file).
class GroundTruthOracle final : public Oracle {
public:
  explicit GroundTruthOracle(std::map<InstanceId, Label> labels) : labels_(std::move(labels)) {}

  Label label(InstanceId id) override {
    auto it = labels_.find(id);
    if (it == labels_.end()) throw LookupError("oracle has no label for instance " + std::to_string(id));
    return it->second;
  }

private:
  std::map<InstanceId, Label> labels_;
};

/// Delegates to a callable; used for scripted and simulated oracles.
class FunctionOracle final : public Oracle {
public:
  explicit FunctionOracle(std::function<Label(InstanceId)> fn) : fn_(std::move(fn)) {}
  Label label(InstanceId id) override { return fn_(id); }

private:
  std::function<Label(InstanceId)> fn_;
};

}  // namespace advdist

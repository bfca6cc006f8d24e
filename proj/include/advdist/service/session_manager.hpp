#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "advdist/common/errors.hpp"
#include "advdist/data/image.hpp"
#include "advdist/search/search.hpp"

namespace advdist {

using nlohmann::json;

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16) |
                   (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += table[(n >> 6) & 63];
    out += table[n & 63];
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t n = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16;
    if (rest == 2) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8;
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += rest == 2 ? table[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

/// 8-bit binary PGM (P5), or PPM (P6) for three-channel images. Other channel
/// counts render the per-pixel channel mean as gray.
inline std::string render_pnm(const ImageTensor& img) {
  const auto& s = img.shape();
  const bool color = s.channels == 3;
  std::string out = std::string(color ? "P6" : "P5") + "\n" + std::to_string(s.width) + " " +
                    std::to_string(s.height) + "\n255\n";
  auto byte = [](double v) { return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))); };
  for (std::size_t h = 0; h < s.height; ++h)
    for (std::size_t w = 0; w < s.width; ++w) {
      if (color) {
        for (std::size_t c = 0; c < 3; ++c) out += byte(img.at(h, w, c));
      } else {
        double m = 0.0;
        for (std::size_t c = 0; c < s.channels; ++c) m += img.at(h, w, c);
        out += byte(m / static_cast<double>(s.channels));
      }
    }
  return out;
}

inline json image_payload(const ImageTensor& img) {
  const auto& s = img.shape();
  return {{"format", s.channels == 3 ? "ppm" : "pgm"},
          {"encoding", "base64"},
          {"data", base64_encode(render_pnm(img))},
          {"height", s.height},
          {"width", s.width},
          {"channels", s.channels},
          {"pixels", std::vector<float>(img.pixels().begin(), img.pixels().end())}};
}

/// NaN has no JSON form; it travels as null.
inline json real_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double real_from_json(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json step_json(const QueriedItem& q, const StepMetrics& m) {
  return {{"step", m.step},
          {"instance_id", q.instance_id},
          {"confidence", q.confidence},
          {"oracle_label", q.oracle_label},
          {"predicted_label", q.predicted_label},
          {"is_error", q.is_error},
          {"sdr", real_json(m.sdr)},
          {"spread", real_json(m.spread)},
          {"bw_utility", real_json(m.bw_utility)},
          {"errors_found", m.errors_found}};
}

inline json session_json(const SearchSession& s) {
  json trace = json::array();
  for (std::size_t i = 0; i < s.per_step.size(); ++i) trace.push_back(step_json(s.queried[i], s.per_step[i]));
  const double sdr = s.per_step.empty() ? 0.0 : s.per_step.back().sdr;
  return {{"strategy", to_string(s.strategy)},
          {"budget", s.budget},
          {"seed", s.seed},
          {"truncated", s.truncated},
          {"aborted", s.aborted},
          {"queries_used", s.queried.size()},
          {"errors_found", s.discovered_errors.size()},
          {"sdr", real_json(sdr)},
          {"discovered_errors", std::vector<InstanceId>(s.discovered_errors.begin(), s.discovered_errors.end())},
          {"trace", trace}};
}

/// Rebuilds a SearchSession from session_json output (the inverse used by wire clients).
inline SearchSession session_from_json(const json& j) {
  SearchSession s;
  s.strategy = parse_strategy(j.at("strategy").get<std::string>());
  s.budget = j.at("budget").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.truncated = j.at("truncated").get<bool>();
  s.aborted = j.at("aborted").get<bool>();
  for (const auto& t : j.at("trace")) {
    QueriedItem q{t.at("instance_id").get<InstanceId>(), t.at("confidence").get<double>(),
                  t.at("predicted_label").get<Label>(), t.at("oracle_label").get<Label>(), t.at("is_error").get<bool>()};
    s.queried.push_back(q);
    if (q.is_error) s.discovered_errors.insert(q.instance_id);
    s.per_step.push_back({t.at("step").get<std::size_t>(), real_from_json(t.at("sdr")), real_from_json(t.at("spread")),
                          real_from_json(t.at("bw_utility")), t.at("errors_found").get<std::size_t>()});
  }
  return s;
}

/// Live audit sessions over one search pool, each driven by a remote oracle.
/// Operations on a session are serialized by that session's lock; the
/// registry itself is guarded separately so sessions proceed in parallel.
class SessionManager {
public:
  SessionManager(std::shared_ptr<const SearchPool> pool, std::map<InstanceId, ImageTensor> images,
                 std::vector<std::string> class_names, std::string trace_dir = {})
      : pool_(std::move(pool)), images_(std::move(images)), class_names_(std::move(class_names)),
        trace_dir_(std::move(trace_dir)) {
    if (class_names_.size() < 2) throw ValidationError("a session service needs at least two class names");
    for (const auto& r : pool_->records)
      if (!images_.contains(r.instance_id))
        throw ValidationError("no image for pool instance " + std::to_string(r.instance_id));
    if (!trace_dir_.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(trace_dir_, ec);
      if (ec) throw IoError("cannot create trace directory '" + trace_dir_ + "': " + ec.message());
    }
  }

  const SearchPool& pool() const noexcept { return *pool_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }

  json capabilities() const {
    json strategies = json::array();
    for (auto s : all_strategies()) strategies.push_back(to_string(s));
    return {{"strategies", strategies}, {"class_names", class_names_}, {"pool_size", pool_->size()}};
  }

  std::string create(const std::string& strategy, long long budget, std::uint64_t seed) {
    const Strategy s = parse_strategy(strategy);
    if (budget <= 0) throw ValidationError("budget must be a positive integer");
    auto live = std::make_shared<Live>(pool_, s, static_cast<std::size_t>(budget), seed);
    std::string id;
    {
      std::unique_lock lock(registry_mu_);
      id = fresh_id();
      sessions_.emplace(id, live);
    }
    persist_meta(id, *live);
    return id;
  }

  json next(const std::string& id) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    const auto& session = live->searcher.session();
    if (live->searcher.done()) {
      json j = session_json(session);
      j["done"] = true;
      j["session_id"] = id;
      return j;
    }
    const InstanceId q = live->searcher.propose();
    const auto& rec = pool_->records[pool_->index_of(q)];
    return {{"done", false},
            {"session_id", id},
            {"instance_id", q},
            {"image", image_payload(images_.at(q))},
            {"predicted_label", rec.predicted_label},
            {"predicted_class", class_name(rec.predicted_label)},
            {"confidence", rec.confidence},
            {"step", session.queried.size() + 1},
            {"budget", session.budget}};
  }

  json submit(const std::string& id, InstanceId instance_id, long long label) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    if (label < 0 || static_cast<std::size_t>(label) >= class_names_.size())
      throw ValidationError("label " + std::to_string(label) + " is outside the class set");
    const StepMetrics m = live->searcher.record(instance_id, static_cast<Label>(label));
    const auto& session = live->searcher.session();
    persist_trace(id, session);
    return {{"is_error", session.queried.back().is_error},
            {"sdr", real_json(m.sdr)},
            {"spread", real_json(m.spread)},
            {"bw_utility", real_json(m.bw_utility)},
            {"errors_found", m.errors_found},
            {"queries_used", session.queried.size()},
            {"step", m.step},
            {"done", live->searcher.done()}};
  }

  json summary(const std::string& id) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    json j = session_json(live->searcher.session());
    j["session_id"] = id;
    j["done"] = live->searcher.done();
    return j;
  }

  json errors(const std::string& id) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    const auto& s = live->searcher.session();
    json gallery = json::array();
    for (std::size_t i = 0; i < s.queried.size(); ++i) {
      const auto& q = s.queried[i];
      if (!q.is_error) continue;
      gallery.push_back({{"instance_id", q.instance_id},
                         {"step", i + 1},
                         {"confidence", q.confidence},
                         {"predicted_label", q.predicted_label},
                         {"predicted_class", class_name(q.predicted_label)},
                         {"oracle_label", q.oracle_label},
                         {"oracle_class", class_name(q.oracle_label)},
                         {"image", image_payload(images_.at(q.instance_id))}});
    }
    return {{"session_id", id}, {"errors", gallery}};
  }

  /// Reloads sessions persisted in the trace directory by replaying their
  /// labels; only a query that was pending at shutdown is lost. Returns the
  /// number of sessions restored.
  std::size_t restore() {
    if (trace_dir_.empty()) return 0;
    std::size_t restored = 0;
    for (const auto& entry : std::filesystem::directory_iterator(trace_dir_)) {
      if (entry.path().extension() != ".json") continue;
      const std::string id = entry.path().stem().string();
      std::ifstream in(entry.path());
      const json meta = json::parse(in, nullptr, false);
      if (meta.is_discarded()) continue;
      auto live = std::make_shared<Live>(pool_, parse_strategy(meta.at("strategy").get<std::string>()),
                                         meta.at("budget").get<std::size_t>(), meta.at("seed").get<std::uint64_t>());
      const auto trace_path = trace_file(id);
      if (std::filesystem::exists(trace_path)) {
        const SearchSession saved = read_session_trace(trace_path);
        for (const auto& q : saved.queried) {
          if (live->searcher.propose() != q.instance_id)
            throw ConflictError("trace of session " + id + " does not replay against this pool");
          live->searcher.record(q.instance_id, q.oracle_label);
        }
      }
      std::unique_lock lock(registry_mu_);
      sessions_[id] = live;
      ++restored;
    }
    return restored;
  }

private:
  struct Live {
    Live(std::shared_ptr<const SearchPool> pool, Strategy s, std::size_t budget, std::uint64_t seed)
        : searcher(std::move(pool), s, budget, seed) {}
    std::mutex mu;
    Searcher searcher;
  };

  std::shared_ptr<Live> find(const std::string& id) const {
    std::shared_lock lock(registry_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw LookupError("no session '" + id + "'");
    return it->second;
  }

  std::string class_name(Label l) const {
    return l >= 0 && static_cast<std::size_t>(l) < class_names_.size() ? class_names_[static_cast<std::size_t>(l)]
                                                                        : std::to_string(l);
  }

  std::string fresh_id() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zx%08x", ++counter_, static_cast<unsigned>(entropy_()));
    return buf;
  }

  std::string trace_file(const std::string& id) const { return (std::filesystem::path(trace_dir_) / (id + ".csv")).string(); }

  void persist_meta(const std::string& id, Live& live) const {
    if (trace_dir_.empty()) return;
    const auto& s = live.searcher.session();
    std::ofstream out(std::filesystem::path(trace_dir_) / (id + ".json"));
    out << json{{"strategy", to_string(s.strategy)}, {"budget", s.budget}, {"seed", s.seed}}.dump() << '\n';
    if (!out) throw IoError("cannot write session metadata for " + id);
  }

  void persist_trace(const std::string& id, const SearchSession& s) const {
    if (trace_dir_.empty()) return;
    const std::string path = trace_file(id), tmp = path + ".tmp";
    write_session_trace(s, tmp);
    std::filesystem::rename(tmp, path);
  }

  std::shared_ptr<const SearchPool> pool_;
  std::map<InstanceId, ImageTensor> images_;
  std::vector<std::string> class_names_;
  std::string trace_dir_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Live>> sessions_;
  std::size_t counter_ = 0;
  std::random_device entropy_;
};

}  // namespace advdist

#pragma once

// Live-trial conduct: a registry of SUBA trials whose every state change is
// written to an append-only JSONL journal before it is acknowledged. Replaying
// a journal re-executes the commands and must reproduce the recorded events.

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "suba/design.hpp"
#include "suba/error.hpp"
#include "suba/io.hpp"

namespace suba {

inline constexpr const char* journal_schema = "suba-journal/1";
inline constexpr const char* journal_dir_env = "SUBA_JOURNAL_DIR";

using Json = nlohmann::json;

// Milliseconds since the epoch by default; tests inject a fixed clock.
using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Trial creation parameters as accepted over the API. Unknown keys are
// rejected.
inline DesignConfig design_from_json(const Json& j) {
  require(j.is_object(), ErrorCode::invalid_argument, "trial config must be a JSON object");
  DesignConfig c;
  int K = 4;
  int depth = 3;
  double phi = 0.5;
  std::optional<std::vector<double>> split_probs;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "N") c.max_patients = v.get<int>();
      else if (k == "runin") c.n_runin = v.get<int>();
      else if (k == "arms") c.n_arms = v.get<int>();
      else if (k == "markers") K = v.get<int>();
      else if (k == "max_rounds") depth = v.get<int>();
      else if (k == "phi") phi = v.get<double>();
      else if (k == "split_probs") split_probs = v.get<std::vector<double>>();
      else if (k == "a") c.hyper.a = v.get<double>();
      else if (k == "b") c.hyper.b = v.get<double>();
      else if (k == "grid") c.grid_points = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "allocation") {
        const auto s = v.get<std::string>();
        require(s == "argmax" || s == "power_randomization", ErrorCode::invalid_argument,
                "allocation must be argmax or power_randomization");
        c.allocation = s == "argmax" ? AllocationMode::argmax : AllocationMode::power_randomization;
      }
      else if (k == "power_c") c.power_c = v.get<double>();
      else if (k == "reference_points") c.reference_points = v.get<std::vector<std::vector<double>>>();
      else fail(ErrorCode::invalid_argument, "unknown trial config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("trial config: ") + e.what());
  }
  require(K >= 1 && K <= 8, ErrorCode::invalid_argument, "markers must be in 1..8");
  require(depth >= 1 && depth <= 4, ErrorCode::invalid_argument, "max_rounds must be in 1..4");
  if (split_probs) {
    c.prior.split_probs = *split_probs;
    c.prior.phi = phi;
    c.prior.max_rounds = depth;
    require(c.prior.n_markers() == K, ErrorCode::invalid_argument, "split_probs must have markers + 1 entries");
  } else {
    c.prior = PriorParams::uniform(K, phi, depth);
  }
  require(c.n_arms >= 2, ErrorCode::invalid_argument, "a trial needs at least two arms");
  c.validate();
  require(count_layouts(K, depth, default_layout_cap) <= default_layout_cap, ErrorCode::resource_limit,
          "partition catalog would exceed the layout cap");
  return c;
}

inline Json design_to_json(const DesignConfig& c) {
  return {{"N", c.max_patients},
          {"runin", c.n_runin},
          {"arms", c.n_arms},
          {"markers", c.n_markers()},
          {"max_rounds", c.prior.max_rounds},
          {"phi", c.prior.phi},
          {"split_probs", c.prior.split_probs},
          {"a", c.hyper.a},
          {"b", c.hyper.b},
          {"grid", c.grid_points},
          {"seed", c.seed},
          {"allocation", to_string(c.allocation)},
          {"power_c", c.power_c},
          {"reference_points", c.reference_points}};
}

class TrialService {
 public:
  struct Options {
    std::optional<std::filesystem::path> journal_dir;
    Clock clock = system_clock_ms;
  };

  TrialService() : TrialService(Options{std::nullopt, system_clock_ms}) {}

  explicit TrialService(Options opt) : opt_(std::move(opt)) {
    if (!opt_.clock) opt_.clock = system_clock_ms;
    if (opt_.journal_dir) {
      std::filesystem::create_directories(*opt_.journal_dir);
      replay_directory();
    }
  }

  // POST /trials. Returns the trial summary.
  Json create_trial(const Json& config, const std::string& idempotency_key = {}) {
    std::unique_lock lock(registry_mu_);
    if (!idempotency_key.empty()) {
      auto it = create_keys_.find(idempotency_key);
      if (it != create_keys_.end()) return it->second;
    }
    DesignConfig cfg = design_from_json(config);
    const std::string id = next_id();
    auto entry = std::make_shared<Entry>(id, cfg);
    Json ev = {{"kind", "trial_created"}, {"config", design_to_json(cfg)}};
    if (!idempotency_key.empty()) ev["idempotency_key"] = idempotency_key;
    std::vector<Json> batch{ev};
    stamp(*entry, batch);
    entry->open_journal(opt_.journal_dir, /*truncate=*/true);
    entry->append(batch);
    entry->refresh();
    Json resp = entry->summary();
    if (!idempotency_key.empty()) create_keys_[idempotency_key] = resp;
    trials_[id] = std::move(entry);
    return resp;
  }

  // POST /trials/{id}/patients with body {"x": [...]}.
  Json enroll(const std::string& id, const Json& body, const std::string& idempotency_key = {}) {
    auto e = find(id);
    std::unique_lock lock(e->mu);
    if (auto hit = e->cached(idempotency_key)) return *hit;
    require(body.is_object() && body.contains("x") && body["x"].is_array(), ErrorCode::invalid_argument,
            "body must be {\"x\": [v1, ..., vK]}");
    std::vector<double> x;
    try {
      x = body["x"].get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::invalid_argument, "x must be an array of numbers");
    }
    for (double v : x) require(std::isfinite(v), ErrorCode::invalid_argument, "x must be finite");
    return apply_enroll(*e, x, idempotency_key, /*replaying=*/nullptr);
  }

  // POST /trials/{id}/patients/{pid}/outcome with body {"y": 0|1}.
  Json record_outcome(const std::string& id, std::int64_t pid, const Json& body,
                      const std::string& idempotency_key = {}) {
    auto e = find(id);
    std::unique_lock lock(e->mu);
    if (auto hit = e->cached(idempotency_key)) return *hit;
    require(body.is_object() && body.contains("y") && body["y"].is_number_integer(),
            ErrorCode::invalid_argument, "body must be {\"y\": 0 or 1}");
    const int y = body["y"].get<int>();
    return apply_outcome(*e, pid, y, idempotency_key, nullptr);
  }

  Json state(const std::string& id) const {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    return e->summary();
  }

  Json partition(const std::string& id) const {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    require(e->view.contains("layout"), ErrorCode::no_data, "no outcomes recorded yet");
    return e->view;
  }

  Json predictive(const std::string& id, const std::vector<double>& x) const {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    const auto& cfg = e->trial.config();
    require(static_cast<int>(x.size()) == cfg.n_markers(), ErrorCode::dimension_mismatch,
            "x has " + std::to_string(x.size()) + " components, expected " + std::to_string(cfg.n_markers()));
    const auto q = e->posterior->predictive(x);
    const auto& st = e->trial.state();
    int best = -1;
    for (std::size_t t = 0; t < q.size(); ++t)
      if (st.active[t] && (best < 0 || q[t] > q[static_cast<std::size_t>(best)])) best = static_cast<int>(t);
    bool outside = false;
    for (std::size_t k = 0; k < x.size(); ++k) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = 0; i < st.data.size(); ++i) {
        lo = std::min(lo, st.data.markers(i, k));
        hi = std::max(hi, st.data.markers(i, k));
      }
      outside = outside || st.data.size() == 0 || x[k] < lo || x[k] > hi;
    }
    return {{"trial", id},
            {"x", x},
            {"q", q},
            {"recommended_arm", best >= 0 ? Json(best + 1) : Json(nullptr)},
            {"active_arms", arms_json(st)},
            {"data_version", e->posterior->snapshot},
            {"extrapolation", outside}};
  }

  Json events(const std::string& id, std::int64_t since = 0) const {
    auto e = find(id);
    std::shared_lock lock(e->mu);
    Json out = Json::array();
    for (const auto& ev : e->events)
      if (ev["seq"].get<std::int64_t>() > since) out.push_back(ev);
    return out;
  }

  std::vector<std::string> trial_ids() const {
    std::shared_lock lock(registry_mu_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : trials_) ids.push_back(id);
    return ids;
  }

  // Re-executes a journal (one JSON event per line) in a fresh in-memory
  // trial and returns the regenerated event stream. Throws parse_error when a
  // regenerated event differs from the recorded one.
  static std::vector<Json> replay_events(const std::vector<Json>& recorded) {
    TrialService scratch;
    return scratch.replay_into(recorded)->events;
  }

  static std::vector<Json> read_journal(const std::filesystem::path& file) {
    std::ifstream is(file);
    require(static_cast<bool>(is), ErrorCode::invalid_argument, "cannot read " + file.string());
    std::vector<Json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (line.empty()) continue;
      try {
        out.push_back(Json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse_error, file.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    return out;
  }

 private:
  struct Entry {
    std::string id;
    SubaTrial trial;
    mutable std::shared_mutex mu;
    std::vector<Json> events;
    std::map<std::string, Json> responses;  // by idempotency key
    std::shared_ptr<const PosteriorState> posterior;
    Json view;  // partition summary for GET /partition
    std::unique_ptr<std::ofstream> journal;

    Entry(std::string id_, const DesignConfig& cfg) : id(std::move(id_)), trial(cfg) {}

    std::optional<Json> cached(const std::string& key) const {
      if (key.empty()) return std::nullopt;
      auto it = responses.find(key);
      if (it == responses.end()) return std::nullopt;
      return it->second;
    }

    void open_journal(const std::optional<std::filesystem::path>& dir, bool truncate) {
      if (!dir) return;
      const auto path = *dir / (id + ".jsonl");
      journal = std::make_unique<std::ofstream>(path, truncate ? std::ios::trunc : std::ios::app);
      require(static_cast<bool>(*journal), ErrorCode::invalid_argument, "cannot open journal " + path.string());
    }

    // Write-ahead: the batch is on disk and flushed before it is visible.
    void append(const std::vector<Json>& batch) {
      if (journal) {
        for (const auto& ev : batch) *journal << ev.dump() << '\n';
        journal->flush();
        require(static_cast<bool>(*journal), ErrorCode::resource_limit, "journal write failed");
      }
      events.insert(events.end(), batch.begin(), batch.end());
    }

    // Rebuilds the read-side snapshot after a mutation.
    void refresh() {
      posterior = trial.posterior_snapshot();
      view = Json::object();
      if (trial.state().data.n_observed() >= 1) view = partition_json(trial.current_partition(), trial);
    }

    Json summary() const {
      const auto& st = trial.state();
      Json drops = Json::array();
      for (const auto& d : st.drops)
        drops.push_back({{"arm", d.arm + 1}, {"enrolled", d.enrolled}, {"observed", d.observed}});
      return {{"id", id},
              {"phase", to_string(st.phase)},
              {"stop_reason", to_string(st.stop_reason)},
              {"enrolled", st.enrolled()},
              {"observed", st.data.n_observed()},
              {"pending", st.pending()},
              {"active_arms", arms_json(st)},
              {"drops", drops},
              {"data_version", st.data_version},
              {"last_seq", events.empty() ? 0 : events.back()["seq"].get<std::int64_t>()},
              {"config", design_to_json(trial.config())}};
    }
  };

  static Json arms_json(const TrialState& st) {
    Json a = Json::array();
    for (int t : st.active_arms()) a.push_back(t + 1);
    return a;
  }

  static Json partition_json(const PartitionSummary& s, const SubaTrial& trial) {
    const auto& layout = s.partition.layout;
    Json nodes = Json::array();
    for (std::size_t i = 0; i < layout.size(); ++i) {
      Json n = {{"index", i}};
      if (layout.is_leaf(i)) {
        n["leaf"] = true;
      } else {
        n["leaf"] = false;
        n["marker"] = layout.marker(static_cast<std::size_t>(i));
        n["threshold"] = s.partition.thresholds[i];
        n["lower"] = layout.lower_child(i);
        n["upper"] = layout.upper_child(i);
      }
      nodes.push_back(n);
    }
    const std::size_t T = s.counts.n_arms;
    Json leaves = Json::array();
    for (std::size_t m = 0; m < s.counts.n_leaves; ++m) {
      Json n1 = Json::array(), n = Json::array(), means = Json::array();
      for (std::size_t t = 0; t < T; ++t) {
        n1.push_back(s.counts.n1(m, t));
        n.push_back(s.counts.n(m, t));
        means.push_back(s.leaf_means[m * T + t]);
      }
      leaves.push_back({{"responders", n1},
                        {"treated", n},
                        {"means", means},
                        {"best_arm", s.best_arm[m] >= 0 ? Json(s.best_arm[m] + 1) : Json(nullptr)}});
    }
    return {{"layout", layout.to_string()},
            {"nodes", nodes},
            {"leaves", leaves},
            {"loss", s.loss},
            {"patients", s.n_patients},
            {"data_version", trial.state().data_version}};
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(registry_mu_);
    auto it = trials_.find(id);
    require(it != trials_.end(), ErrorCode::unknown_trial, "unknown trial '" + id + "'");
    return it->second;
  }

  std::string next_id() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "T%04d", ++counter_);
    return buf;
  }

  void stamp(const Entry& e, std::vector<Json>& batch, const std::vector<Json>* recorded = nullptr) {
    std::int64_t seq = e.events.empty() ? 0 : e.events.back()["seq"].get<std::int64_t>();
    const std::int64_t now = recorded ? 0 : opt_.clock();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& ev = batch[i];
      Json out = {{"schema", journal_schema}, {"seq", ++seq}, {"trial", e.id}};
      const auto at = static_cast<std::size_t>(seq - 1);
      out["time"] = !recorded ? now
                    : at < recorded->size() ? (*recorded)[at].value("time", std::int64_t{0})
                                            : std::int64_t{0};
      for (auto it = ev.begin(); it != ev.end(); ++it) out[it.key()] = it.value();
      ev = std::move(out);
    }
  }

  Json apply_enroll(Entry& e, const std::vector<double>& x, const std::string& key,
                    const std::vector<Json>* recorded) {
    const auto en = e.trial.enroll(x);
    Json q = en.q;
    std::vector<Json> batch;
    Json enrolled = {{"kind", "patient_enrolled"}, {"patient", en.patient + 1}, {"x", x}};
    if (!key.empty()) enrolled["idempotency_key"] = key;
    batch.push_back(enrolled);
    batch.push_back({{"kind", "arm_assigned"},
                     {"patient", en.patient + 1},
                     {"arm", en.arm + 1},
                     {"phase", to_string(en.phase)},
                     {"q", q},
                     {"data_version", en.snapshot}});
    stamp(e, batch, recorded);
    e.append(batch);
    e.refresh();
    Json resp = {{"trial", e.id},
                 {"patient", en.patient + 1},
                 {"arm", en.arm + 1},
                 {"phase", to_string(en.phase)},
                 {"q", q},
                 {"seq", batch.back()["seq"]}};
    if (!key.empty()) e.responses[key] = resp;
    return resp;
  }

  Json apply_outcome(Entry& e, std::int64_t pid, int y, const std::string& key,
                     const std::vector<Json>* recorded) {
    require(pid >= 1 && static_cast<std::size_t>(pid) <= e.trial.state().enrolled(), ErrorCode::unknown_patient,
            "unknown patient " + std::to_string(pid));
    const auto delta = e.trial.record_outcome(static_cast<std::size_t>(pid - 1), y);
    std::vector<Json> batch;
    Json rec = {{"kind", "outcome_recorded"}, {"patient", pid}, {"y", y}};
    if (!key.empty()) rec["idempotency_key"] = key;
    batch.push_back(rec);
    const auto& st = e.trial.state();
    for (int arm : delta.dropped)
      batch.push_back({{"kind", "arm_dropped"}, {"arm", arm + 1}, {"enrolled", st.enrolled()},
                       {"observed", st.data.n_observed()}});
    if (delta.stopped && !was_stopped(e))
      batch.push_back({{"kind", "trial_stopped"}, {"reason", to_string(delta.stop_reason)},
                       {"enrolled", st.enrolled()}, {"active_arms", arms_json(st)}});
    stamp(e, batch, recorded);
    e.append(batch);
    e.refresh();
    Json dropped = Json::array();
    for (int arm : delta.dropped) dropped.push_back(arm + 1);
    Json resp = {{"trial", e.id},
                 {"patient", pid},
                 {"y", y},
                 {"dropped", dropped},
                 {"phase", to_string(st.phase)},
                 {"stop_reason", to_string(st.stop_reason)},
                 {"seq", batch.back()["seq"]}};
    if (!key.empty()) e.responses[key] = resp;
    return resp;
  }

  // True when a trial_stopped event is already on record.
  static bool was_stopped(const Entry& e) {
    for (auto it = e.events.rbegin(); it != e.events.rend(); ++it)
      if ((*it)["kind"] == "trial_stopped") return true;
    return false;
  }

  std::shared_ptr<Entry> replay_into(const std::vector<Json>& recorded) {
    require(!recorded.empty(), ErrorCode::parse_error, "empty journal");
    auto bad = [](std::size_t i, const std::string& what) {
      fail(ErrorCode::parse_error, "journal event " + std::to_string(i + 1) + ": " + what);
    };
    for (std::size_t i = 0; i < recorded.size(); ++i) {
      const auto& ev = recorded[i];
      if (!ev.is_object() || ev.value("schema", "") != journal_schema) bad(i, "unsupported schema");
      if (ev.value("seq", std::int64_t{-1}) != static_cast<std::int64_t>(i + 1)) bad(i, "sequence gap");
    }
    const auto& first = recorded.front();
    if (first.value("kind", "") != "trial_created") bad(0, "journal must start with trial_created");
    const std::string id = first.value("trial", "");
    if (id.empty()) bad(0, "missing trial id");
    auto e = std::make_shared<Entry>(id, design_from_json(first.at("config")));
    std::vector<Json> batch{{{"kind", "trial_created"}, {"config", first.at("config")}}};
    if (first.contains("idempotency_key")) batch[0]["idempotency_key"] = first["idempotency_key"];
    stamp(*e, batch, &recorded);
    e->append(batch);
    e->refresh();
    if (first.contains("idempotency_key")) create_keys_[first["idempotency_key"]] = e->summary();

    for (std::size_t i = 1; i < recorded.size(); ++i) {
      const auto& ev = recorded[i];
      const std::string kind = ev.value("kind", "");
      const std::string key = ev.value("idempotency_key", "");
      if (kind == "patient_enrolled") {
        apply_enroll(*e, ev.at("x").get<std::vector<double>>(), key, &recorded);
      } else if (kind == "outcome_recorded") {
        apply_outcome(*e, ev.at("patient").get<std::int64_t>(), ev.at("y").get<int>(), key, &recorded);
      } else if (kind == "arm_assigned" || kind == "arm_dropped" || kind == "trial_stopped") {
        // Derived events: regenerated by the commands above.
        continue;
      } else {
        bad(i, "unknown event kind '" + kind + "'");
      }
    }
    if (e->events.size() != recorded.size())
      fail(ErrorCode::parse_error, "replay produced " + std::to_string(e->events.size()) +
                                       " events, journal has " + std::to_string(recorded.size()));
    for (std::size_t i = 0; i < recorded.size(); ++i)
      if (e->events[i] != recorded[i]) bad(i, "replay diverged: expected " + recorded[i].dump() +
                                                  ", regenerated " + e->events[i].dump());
    return e;
  }

  void replay_directory() {
    std::vector<std::filesystem::path> files;
    for (const auto& f : std::filesystem::directory_iterator(*opt_.journal_dir))
      if (f.is_regular_file() && f.path().extension() == ".jsonl") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto recorded = read_journal(f);
      if (recorded.empty()) continue;
      auto e = replay_into(recorded);
      e->open_journal(opt_.journal_dir, /*truncate=*/false);
      int n = 0;
      if (std::sscanf(e->id.c_str(), "T%d", &n) == 1) counter_ = std::max(counter_, n);
      trials_[e->id] = std::move(e);
    }
  }

  Options opt_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> trials_;
  std::map<std::string, Json> create_keys_;
  int counter_ = 0;
};

}  // namespace suba

#pragma once

// Subgroup-based adaptive design: equal-randomization run-in, allocation by
// posterior predictive response, grid-based arm exclusion with early stopping,
// and the end-of-trial partition report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "suba/error.hpp"
#include "suba/partition.hpp"
#include "suba/posterior.hpp"
#include "suba/rng.hpp"

namespace suba {

enum class Phase { run_in, adaptive, stopped };
enum class StopReason { none, single_arm_left, max_enrollment };
enum class AllocationMode { argmax, power_randomization };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::run_in: return "run_in";
    case Phase::adaptive: return "adaptive";
    case Phase::stopped: return "stopped";
  }
  return "?";
}

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::none: return "none";
    case StopReason::single_arm_left: return "single_arm_left";
    case StopReason::max_enrollment: return "max_enrollment";
  }
  return "?";
}

inline const char* to_string(AllocationMode m) {
  return m == AllocationMode::argmax ? "argmax" : "power_randomization";
}

struct DesignConfig {
  int max_patients = 300;
  int n_runin = 100;
  int n_arms = 3;
  BetaHyper hyper{1.0, 1.0};
  PriorParams prior = PriorParams::uniform(4, 0.5, 3);
  int grid_points = 10;
  AllocationMode allocation = AllocationMode::argmax;
  double power_c = 1.0;
  std::uint64_t seed = 0;
  LsCriterion ls_criterion = LsCriterion::squared_distance_to_mean;
  // When non-empty, replaces the equally spaced exclusion grid.
  std::vector<std::vector<double>> reference_points;

  int n_markers() const { return prior.n_markers(); }

  // A single-arm universe is accepted so the degenerate case can be exercised;
  // the service requires at least two arms.
  void validate() const {
    require(max_patients >= 1, ErrorCode::invalid_argument, "N must be positive");
    require(n_runin >= 1 && n_runin <= max_patients, ErrorCode::invalid_argument,
            "run-in size must satisfy 0 < n_runin <= N");
    require(n_arms >= 1, ErrorCode::invalid_argument, "need at least one arm");
    require(grid_points >= 2, ErrorCode::invalid_argument, "grid needs at least 2 points per marker");
    require(allocation == AllocationMode::argmax || power_c > 0.0, ErrorCode::invalid_argument,
            "power randomization exponent must be positive");
    hyper.validate();
    prior.validate();
    for (const auto& p : reference_points)
      require(static_cast<int>(p.size()) == n_markers(), ErrorCode::dimension_mismatch,
              "reference point has the wrong number of markers");
  }
};

struct DropEvent {
  int arm = 0;
  std::size_t enrolled = 0;  // enrollment count when the arm was dropped
  std::size_t observed = 0;  // outcomes recorded at that time
};

struct TrialState {
  TrialData data;
  std::vector<bool> active;
  Phase phase = Phase::run_in;
  StopReason stop_reason = StopReason::none;
  std::uint64_t data_version = 0;  // bumps on every enrollment or outcome
  std::vector<DropEvent> drops;
  std::size_t stop_enrolled = 0;

  TrialState() = default;
  explicit TrialState(const DesignConfig& cfg)
      : data(static_cast<std::size_t>(cfg.n_markers())),
        active(static_cast<std::size_t>(cfg.n_arms), true) {}

  std::size_t enrolled() const { return data.size(); }
  std::size_t n_active() const {
    return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  }
  std::vector<int> active_arms() const {
    std::vector<int> out;
    for (std::size_t t = 0; t < active.size(); ++t)
      if (active[t]) out.push_back(static_cast<int>(t));
    return out;
  }
  std::size_t pending() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < data.size(); ++i) c += data.outcomes[i] < 0 ? 1 : 0;
    return c;
  }
};

// Exclusion grid: H0 equally spaced values between the observed extremes of
// every marker, or an explicit list of points.
class GridSpec {
 public:
  static GridSpec from_data(const TrialData& data, int points_per_dim) {
    GridSpec g;
    const std::size_t K = data.n_markers();
    g.per_dim_ = static_cast<std::size_t>(points_per_dim);
    g.lo_.assign(K, 0.0);
    g.hi_.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i = 0; i < data.size(); ++i) {
        lo = std::min(lo, data.markers(i, k));
        hi = std::max(hi, data.markers(i, k));
      }
      if (data.size() == 0) lo = hi = 0.0;
      g.lo_[k] = lo;
      g.hi_[k] = hi;
    }
    g.size_ = 1;
    for (std::size_t k = 0; k < K; ++k) g.size_ *= g.per_dim_;
    return g;
  }

  static GridSpec from_points(std::vector<std::vector<double>> points) {
    GridSpec g;
    g.size_ = points.size();
    g.points_ = std::move(points);
    return g;
  }

  std::size_t size() const { return size_; }
  std::size_t n_markers() const { return points_.empty() ? lo_.size() : points_.front().size(); }
  const std::vector<double>& lower() const { return lo_; }
  const std::vector<double>& upper() const { return hi_; }

  void point(std::size_t h, std::span<double> x) const {
    if (!points_.empty()) {
      std::copy(points_[h].begin(), points_[h].end(), x.begin());
      return;
    }
    for (std::size_t k = 0; k < lo_.size(); ++k) {
      const std::size_t j = h % per_dim_;
      h /= per_dim_;
      x[k] = lo_[k] + (hi_[k] - lo_[k]) * static_cast<double>(j) / static_cast<double>(per_dim_ - 1);
    }
  }

 private:
  std::vector<double> lo_, hi_;
  std::size_t per_dim_ = 0;
  std::size_t size_ = 0;
  std::vector<std::vector<double>> points_;
};

inline GridSpec make_grid(const TrialState& state, const DesignConfig& cfg) {
  if (!cfg.reference_points.empty()) return GridSpec::from_points(cfg.reference_points);
  return GridSpec::from_data(state.data, cfg.grid_points);
}

namespace detail {

inline void require_marker_count(std::span<const double> x, const DesignConfig& cfg) {
  require(static_cast<int>(x.size()) == cfg.n_markers(), ErrorCode::dimension_mismatch,
          "biomarker vector has " + std::to_string(x.size()) + " components, expected " +
              std::to_string(cfg.n_markers()));
}

inline std::size_t enroll(TrialState& state, const DesignConfig& cfg, std::span<const double> x,
                          int arm) {
  const std::size_t id = state.data.add(x, arm);
  ++state.data_version;
  if (state.phase == Phase::run_in && state.enrolled() >= static_cast<std::size_t>(cfg.n_runin))
    state.phase = Phase::adaptive;
  return id;
}

}  // namespace detail

// Picks an arm among the active ones from predictive probabilities: the
// argmax with exact ties broken uniformly, or a draw with probability
// proportional to q^c.
inline int select_arm(std::span<const double> q, const std::vector<bool>& active,
                      AllocationMode mode, double power_c, Rng& rng) {
  if (mode == AllocationMode::power_randomization) {
    std::vector<double> w(q.size(), 0.0);
    for (std::size_t t = 0; t < q.size(); ++t)
      if (active[t]) w[t] = std::pow(q[t], power_c);
    return static_cast<int>(sample_weighted(rng, w));
  }
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> ties;
  for (std::size_t t = 0; t < q.size(); ++t) {
    if (!active[t]) continue;
    if (q[t] > best) {
      best = q[t];
      ties.assign(1, static_cast<int>(t));
    } else if (q[t] == best) {
      ties.push_back(static_cast<int>(t));
    }
  }
  require(!ties.empty(), ErrorCode::invalid_argument, "no active arm");
  if (ties.size() == 1) return ties.front();
  return ties[uniform_index(rng, ties.size())];
}

// Equal randomization over the arm universe during the run-in.
inline int runin_assign(TrialState& state, const DesignConfig& cfg, Rng& rng,
                        std::span<const double> x) {
  require(state.phase == Phase::run_in, ErrorCode::invalid_phase,
          std::string("run-in assignment in phase ") + to_string(state.phase));
  detail::require_marker_count(x, cfg);
  const int arm = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.n_arms)));
  detail::enroll(state, cfg, x, arm);
  return arm;
}

struct AdaptiveDecision {
  int arm = 0;
  std::vector<double> q;  // over the whole arm universe
};

inline AdaptiveDecision adaptive_assign(TrialState& state, const PosteriorState& posterior,
                                        const DesignConfig& cfg, Rng& rng,
                                        std::span<const double> x) {
  require(state.phase == Phase::adaptive, ErrorCode::invalid_phase,
          std::string("adaptive assignment in phase ") + to_string(state.phase));
  require(posterior.snapshot == state.data_version, ErrorCode::stale_posterior,
          "posterior does not reflect the current trial data");
  detail::require_marker_count(x, cfg);
  AdaptiveDecision d;
  d.q = posterior.predictive(x);
  d.arm = select_arm(d.q, state.active, cfg.allocation, cfg.power_c, rng);
  detail::enroll(state, cfg, x, d.arm);
  return d;
}

struct ExclusionResult {
  std::vector<int> dropped;
  bool stopped = false;
  std::size_t grid_points_evaluated = 0;
};

// Drops every active arm whose predictive response is strictly below every
// other active arm at every grid point. Arms are judged against the active
// set as it was before the check. scan_start is the grid index to begin the
// scan at (the result is independent of it); it is updated to the last
// point that protected an arm.
inline ExclusionResult exclusion_check(TrialState& state, const PosteriorState& posterior,
                                       const DesignConfig& cfg, std::size_t* scan_start = nullptr) {
  require(state.phase == Phase::adaptive, ErrorCode::invalid_phase,
          std::string("exclusion check in phase ") + to_string(state.phase));
  require(posterior.snapshot == state.data_version, ErrorCode::stale_posterior,
          "posterior does not reflect the current trial data");
  ExclusionResult res;
  const auto arms = state.active_arms();
  if (arms.size() < 2) return res;

  const GridSpec grid = make_grid(state, cfg);
  const std::size_t H = grid.size();
  const std::size_t T = static_cast<std::size_t>(cfg.n_arms);
  std::vector<bool> kept(T, false);
  std::size_t n_kept = 0;
  std::vector<double> x(static_cast<std::size_t>(cfg.n_markers()));
  std::vector<double> q(T);
  std::size_t start = scan_start && H ? *scan_start % H : 0;

  for (std::size_t step = 0; step < H && n_kept < arms.size(); ++step) {
    const std::size_t h = (start + step) % H;
    grid.point(h, x);
    posterior.predictive_into(x, q);
    ++res.grid_points_evaluated;
    // The only arm that can be excluded at this point is a strict unique
    // minimum; every other arm is protected.
    int low = -1;
    bool unique = true;
    for (int t : arms) {
      if (low < 0 || q[static_cast<std::size_t>(t)] < q[static_cast<std::size_t>(low)]) {
        low = t;
        unique = true;
      } else if (q[static_cast<std::size_t>(t)] == q[static_cast<std::size_t>(low)]) {
        unique = false;
      }
    }
    bool protected_new = false;
    for (int t : arms) {
      if (kept[static_cast<std::size_t>(t)]) continue;
      if (unique && t == low) continue;
      kept[static_cast<std::size_t>(t)] = true;
      ++n_kept;
      protected_new = true;
    }
    if (protected_new && scan_start) *scan_start = h;
  }

  std::vector<int> drop;
  for (int t : arms)
    if (!kept[static_cast<std::size_t>(t)]) drop.push_back(t);
  if (drop.size() == arms.size()) {
    // Unreachable with a non-empty grid; retain the best arm on average.
    std::vector<double> mean(T, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      grid.point(h, x);
      posterior.predictive_into(x, q);
      for (int t : arms) mean[static_cast<std::size_t>(t)] += q[static_cast<std::size_t>(t)];
    }
    int keep = arms.front();
    for (int t : arms)
      if (mean[static_cast<std::size_t>(t)] > mean[static_cast<std::size_t>(keep)]) keep = t;
    drop.erase(std::remove(drop.begin(), drop.end(), keep), drop.end());
  }
  for (int t : drop) {
    state.active[static_cast<std::size_t>(t)] = false;
    state.drops.push_back({t, state.enrolled(), state.data.n_observed()});
  }
  res.dropped = drop;
  if (!drop.empty() && state.n_active() == 1) {
    state.phase = Phase::stopped;
    state.stop_reason = StopReason::single_arm_left;
    state.stop_enrolled = state.enrolled();
    res.stopped = true;
  }
  return res;
}

struct FinalReport {
  PartitionSummary summary;
  std::vector<DropEvent> drops;
  std::vector<int> surviving_arms;
  StopReason stop_reason = StopReason::none;
  std::size_t enrolled = 0;
  std::size_t stop_enrolled = 0;
  std::vector<int> assigned;    // per arm
  std::vector<int> responders;  // per arm
};

struct Enrollment {
  std::size_t patient = 0;
  int arm = 0;
  Phase phase = Phase::run_in;  // phase in which the assignment was made
  std::vector<double> q;        // predictive q over the arm universe
  std::uint64_t snapshot = 0;   // data version of the posterior used
};

struct OutcomeDelta {
  std::vector<int> dropped;
  bool stopped = false;
  StopReason stop_reason = StopReason::none;
  bool exclusion_checked = false;
};

// Caches catalogs by prior so trials with the same K, depth and prior share
// one immutable catalog.
inline std::shared_ptr<const PartitionCatalog> shared_catalog(const PriorParams& prior) {
  static std::mutex mu;
  static std::map<std::tuple<std::vector<double>, double, int>,
                  std::shared_ptr<const PartitionCatalog>>
      cache;
  prior.validate();
  std::lock_guard lock(mu);
  auto key = std::make_tuple(prior.split_probs, prior.phi, prior.max_rounds);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto cat = std::make_shared<const PartitionCatalog>(make_catalog(prior));
  cache.emplace(key, cat);
  return cat;
}

// One trial run under the design. Mutations are single-threaded; the
// posterior is rebuilt lazily whenever the data changed since the last build.
class SubaTrial {
 public:
  explicit SubaTrial(DesignConfig cfg, std::shared_ptr<const PartitionCatalog> catalog = nullptr)
      : cfg_(std::move(cfg)), rng_(derive_seed(cfg_.seed, 0x5ba)) {
    cfg_.validate();
    catalog_ = catalog ? std::move(catalog) : shared_catalog(cfg_.prior);
    require(catalog_->n_markers == cfg_.n_markers() && catalog_->max_rounds == cfg_.prior.max_rounds,
            ErrorCode::invalid_argument, "catalog does not match the design prior");
    state_ = TrialState(cfg_);
  }

  const DesignConfig& config() const { return cfg_; }
  const TrialState& state() const { return state_; }
  const std::shared_ptr<const PartitionCatalog>& catalog() const { return catalog_; }

  bool enrollment_open() const {
    return state_.phase != Phase::stopped &&
           state_.enrolled() < static_cast<std::size_t>(cfg_.max_patients);
  }

  const PosteriorState& posterior() {
    if (!posterior_ || posterior_->snapshot != state_.data_version)
      posterior_ = std::make_shared<const PosteriorState>(rebuild_posterior(
          catalog_, state_.data, cfg_.hyper, static_cast<std::size_t>(cfg_.n_arms),
          state_.data_version));
    return *posterior_;
  }

  std::shared_ptr<const PosteriorState> posterior_snapshot() {
    posterior();
    return posterior_;
  }

  std::vector<double> predictive(std::span<const double> x) {
    detail::require_marker_count(x, cfg_);
    return posterior().predictive(x);
  }

  Enrollment enroll(std::span<const double> x) {
    require(state_.phase != Phase::stopped, ErrorCode::invalid_phase, "trial is stopped");
    require(state_.enrolled() < static_cast<std::size_t>(cfg_.max_patients),
            ErrorCode::invalid_phase, "maximum enrollment reached");
    detail::require_marker_count(x, cfg_);
    Enrollment e;
    e.phase = state_.phase;
    if (state_.phase == Phase::run_in) {
      e.q = posterior().predictive(x);
      e.snapshot = posterior_->snapshot;
      e.arm = runin_assign(state_, cfg_, rng_, x);
    } else {
      const auto& post = posterior();
      e.snapshot = post.snapshot;
      auto d = adaptive_assign(state_, post, cfg_, rng_, x);
      e.arm = d.arm;
      e.q = std::move(d.q);
    }
    e.patient = state_.enrolled() - 1;
    return e;
  }

  // Same as enroll but skips the run-in predictive evaluation (simulation
  // fast path). The returned q is empty during the run-in.
  Enrollment enroll_fast(std::span<const double> x) {
    if (state_.phase != Phase::run_in) return enroll(x);
    require(state_.enrolled() < static_cast<std::size_t>(cfg_.max_patients),
            ErrorCode::invalid_phase, "maximum enrollment reached");
    Enrollment e;
    e.phase = Phase::run_in;
    e.arm = runin_assign(state_, cfg_, rng_, x);
    e.patient = state_.enrolled() - 1;
    return e;
  }

  OutcomeDelta record_outcome(std::size_t patient, int y) {
    require(patient < state_.enrolled(), ErrorCode::unknown_patient,
            "unknown patient " + std::to_string(patient));
    require(y == 0 || y == 1, ErrorCode::invalid_argument, "outcome must be 0 or 1");
    const bool is_pending = state_.data.outcomes[patient] < 0;
    // A trial stopped for a single surviving arm still accepts outcomes of
    // patients who were already treated; nothing else is accepted once stopped.
    require(state_.phase != Phase::stopped || is_pending, ErrorCode::invalid_phase,
            "trial is stopped");
    require(is_pending, ErrorCode::duplicate_outcome,
            "outcome already recorded for patient " + std::to_string(patient));
    require(state_.data.arms[patient] >= 0, ErrorCode::invalid_phase, "patient has no arm");
    state_.data.outcomes[patient] = y;
    ++state_.data_version;

    OutcomeDelta delta;
    // The last outcome of a full trial ends it; no one is left to allocate,
    // so no exclusion check runs.
    const bool complete =
        state_.enrolled() == static_cast<std::size_t>(cfg_.max_patients) && state_.pending() == 0;
    // Checks start once every run-in outcome is in, so a late run-in
    // response cannot be outvoted by a single early one.
    if (!complete && state_.phase == Phase::adaptive &&
        state_.data.n_observed() >= static_cast<std::size_t>(cfg_.n_runin)) {
      auto res = exclusion_check(state_, posterior(), cfg_, &scan_hint_);
      delta.exclusion_checked = true;
      delta.dropped = res.dropped;
    }
    if (complete && state_.phase != Phase::stopped) {
      state_.phase = Phase::stopped;
      state_.stop_reason = StopReason::max_enrollment;
      state_.stop_enrolled = state_.enrolled();
    }
    delta.stopped = state_.phase == Phase::stopped;
    delta.stop_reason = state_.stop_reason;
    return delta;
  }

  FinalReport final_report() {
    require(state_.phase == Phase::stopped, ErrorCode::invalid_phase,
            "final report requires a stopped trial");
    require(state_.enrolled() >= 1, ErrorCode::no_data, "no patients enrolled");
    FinalReport r;
    r.summary = least_squares_partition(posterior(), state_.data, cfg_.ls_criterion, &state_.active);
    r.drops = state_.drops;
    r.surviving_arms = state_.active_arms();
    r.stop_reason = state_.stop_reason;
    r.enrolled = state_.enrolled();
    r.stop_enrolled = state_.stop_enrolled;
    r.assigned.assign(static_cast<std::size_t>(cfg_.n_arms), 0);
    r.responders.assign(static_cast<std::size_t>(cfg_.n_arms), 0);
    for (std::size_t i = 0; i < state_.enrolled(); ++i) {
      const int a = state_.data.arms[i];
      if (a < 0) continue;
      r.assigned[static_cast<std::size_t>(a)] += 1;
      if (state_.data.outcomes[i] == 1) r.responders[static_cast<std::size_t>(a)] += 1;
    }
    return r;
  }

  // Current least-squares partition; available at any phase once an outcome exists.
  PartitionSummary current_partition() {
    require(state_.data.n_observed() >= 1, ErrorCode::no_data, "no outcomes recorded yet");
    return least_squares_partition(posterior(), state_.data, cfg_.ls_criterion, &state_.active);
  }

 private:
  DesignConfig cfg_;
  Rng rng_;
  std::shared_ptr<const PartitionCatalog> catalog_;
  TrialState state_;
  std::shared_ptr<const PosteriorState> posterior_;
  std::size_t scan_hint_ = 0;
};

}  // namespace suba

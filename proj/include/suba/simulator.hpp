#pragma once

// Monte Carlo trial simulation under the six scenarios for SUBA and the three
// comparator designs, with common random numbers across designs.

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "suba/comparators.hpp"
#include "suba/design.hpp"
#include "suba/error.hpp"
#include "suba/probit.hpp"
#include "suba/rng.hpp"
#include "suba/scenarios.hpp"

namespace suba {

enum class DesignId { suba, er, ar, reg };

inline constexpr DesignId all_designs[] = {DesignId::suba, DesignId::er, DesignId::ar,
                                           DesignId::reg};

inline const char* to_string(DesignId d) {
  switch (d) {
    case DesignId::suba: return "SUBA";
    case DesignId::er: return "ER";
    case DesignId::ar: return "AR";
    case DesignId::reg: return "Reg";
  }
  return "?";
}

inline DesignId parse_design(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "SUBA") return DesignId::suba;
  if (u == "ER") return DesignId::er;
  if (u == "AR") return DesignId::ar;
  if (u == "REG") return DesignId::reg;
  fail(ErrorCode::invalid_argument, "unknown design '" + s + "'");
}

// Everything a single simulated trial needs besides the scenario and seed.
struct SimConfig {
  int max_patients = 300;
  int n_runin = 100;
  double phi = 0.5;
  int max_rounds = 3;
  int grid_points = 10;
  BetaHyper hyper{1.0, 1.0};
  AllocationMode allocation = AllocationMode::argmax;
  double power_c = 1.0;
  std::vector<std::vector<double>> reference_points;
  ARConfig ar;
  ArmCoding reg_coding = ArmCoding::categorical;

  void validate() const {
    require(max_patients >= 1, ErrorCode::invalid_argument, "N must be positive");
    require(n_runin >= 1 && n_runin <= max_patients, ErrorCode::invalid_argument,
            "run-in size must satisfy 0 < n_runin <= N");
    require(phi > 0.0 && phi <= 1.0, ErrorCode::invalid_argument, "phi must lie in (0, 1]");
    ar.validate();
  }

  DesignConfig design_config(std::uint64_t seed) const {
    DesignConfig d;
    d.max_patients = max_patients;
    d.n_runin = n_runin;
    d.n_arms = scenario_arms;
    d.hyper = hyper;
    d.prior = PriorParams::uniform(scenario_markers, phi, max_rounds);
    d.grid_points = grid_points;
    d.allocation = allocation;
    d.power_c = power_c;
    d.seed = seed;
    d.reference_points = reference_points;
    return d;
  }
};

// N + 1 virtual patients: biomarkers plus one outcome uniform each. Patient i
// responds to arm t iff u_i < theta_t(x_i), so every design in a replicate
// sees the same people. The extra row is the fresh profile used for the
// end-of-trial predictive comparison.
struct PatientStream {
  std::size_t n_markers = 0;
  std::vector<double> x;  // row-major
  std::vector<double> u;

  std::size_t size() const { return u.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * n_markers, n_markers}; }
};

inline PatientStream make_patient_stream(const ScenarioSpec& sc, std::size_t n, std::uint64_t seed) {
  PatientStream s;
  s.n_markers = static_cast<std::size_t>(sc.n_markers());
  s.x.resize(n * s.n_markers);
  s.u.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    sc.draw_markers(rng, std::span<double>(s.x.data() + i * s.n_markers, s.n_markers));
    s.u[i] = uniform01(rng);
  }
  return s;
}

struct TrialRecord {
  DesignId design = DesignId::suba;
  std::size_t replicate = 0;
  std::optional<double> orr_value;  // empty when no patient follows the run-in
  std::vector<int> np;              // post-run-in patients per arm
  std::vector<std::vector<int>> np_subset;  // [truth subset][arm], ties excluded
  int responders_post = 0;
  int stop_size = 0;  // enrollment at which the design stopped adapting
  std::vector<DropEvent> drops;
  std::vector<double> final_q;  // SUBA only: q at the fresh profile

  double orr() const {
    require(orr_value.has_value(), ErrorCode::empty_set, "no patients after the run-in");
    return *orr_value;
  }
};

namespace detail {

inline TrialRecord start_record(DesignId design, const ScenarioSpec& sc) {
  TrialRecord r;
  r.design = design;
  r.np.assign(static_cast<std::size_t>(sc.n_arms()), 0);
  if (sc.has_subsets())
    r.np_subset.assign(static_cast<std::size_t>(sc.n_subsets()),
                       std::vector<int>(static_cast<std::size_t>(sc.n_arms()), 0));
  return r;
}

inline int observe(const ScenarioSpec& sc, const PatientStream& ps, std::size_t i, int arm) {
  return ps.u[i] < sc.true_response(arm, ps.row(i)) ? 1 : 0;
}

inline void tally(TrialRecord& r, const ScenarioSpec& sc, const PatientStream& ps, std::size_t i,
                  int arm, int y) {
  r.np[static_cast<std::size_t>(arm)] += 1;
  r.responders_post += y;
  if (sc.has_subsets()) {
    const auto lab = sc.truth_subset(ps.row(i));
    if (!lab.tie)
      r.np_subset[static_cast<std::size_t>(lab.index)][static_cast<std::size_t>(arm)] += 1;
  }
}

inline void finish(TrialRecord& r, const SimConfig& cfg) {
  const int post = cfg.max_patients - cfg.n_runin;
  if (post > 0) r.orr_value = static_cast<double>(r.responders_post) / post;
}

inline TrialRecord simulate_suba(const ScenarioSpec& sc, const SimConfig& cfg,
                                 const PatientStream& ps, std::uint64_t seed,
                                 std::shared_ptr<const PartitionCatalog> catalog) {
  TrialRecord r = start_record(DesignId::suba, sc);
  SubaTrial trial(cfg.design_config(seed), std::move(catalog));
  const auto N = static_cast<std::size_t>(cfg.max_patients);
  std::size_t i = 0;
  for (; i < N && trial.enrollment_open(); ++i) {
    const auto e = trial.enroll_fast(ps.row(i));
    const int y = observe(sc, ps, i, e.arm);
    if (i >= static_cast<std::size_t>(cfg.n_runin)) tally(r, sc, ps, i, e.arm, y);
    trial.record_outcome(e.patient, y);
  }
  const auto& st = trial.state();
  r.drops = st.drops;
  r.stop_size = static_cast<int>(st.stop_enrolled ? st.stop_enrolled : st.enrolled());
  r.final_q = trial.predictive(ps.row(N));
  // Early stop: everyone left goes to the surviving arm.
  const auto survivors = st.active_arms();
  for (; i < N; ++i) {
    const int arm = survivors.front();
    tally(r, sc, ps, i, arm, observe(sc, ps, i, arm));
  }
  finish(r, cfg);
  return r;
}

inline TrialRecord simulate_er(const ScenarioSpec& sc, const SimConfig& cfg,
                               const PatientStream& ps, std::uint64_t seed) {
  TrialRecord r = start_record(DesignId::er, sc);
  Rng rng(seed);
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.max_patients); ++i) {
    const int arm = er_assign(rng, sc.n_arms());
    const int y = observe(sc, ps, i, arm);
    if (i >= static_cast<std::size_t>(cfg.n_runin)) tally(r, sc, ps, i, arm, y);
  }
  r.stop_size = cfg.max_patients;
  finish(r, cfg);
  return r;
}

inline TrialRecord simulate_ar(const ScenarioSpec& sc, const SimConfig& cfg,
                               const PatientStream& ps, std::uint64_t seed) {
  TrialRecord r = start_record(DesignId::ar, sc);
  Rng rng(seed);
  ARCounts counts(cfg.ar, sc.n_arms());
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.max_patients); ++i) {
    const bool runin = i < static_cast<std::size_t>(cfg.n_runin);
    const int arm = runin ? er_assign(rng, sc.n_arms()) : ar_assign(counts, ps.row(i), rng);
    const int y = observe(sc, ps, i, arm);
    if (!runin) tally(r, sc, ps, i, arm, y);
    counts.add(ps.row(i), arm, y);
  }
  r.stop_size = cfg.max_patients;
  finish(r, cfg);
  return r;
}

// Marker columns that vary in the data. A constant marker is absorbed by the
// arm effects and would make the design matrix singular.
inline std::vector<std::size_t> varying_markers(const ProbitData& data) {
  std::vector<std::size_t> keep;
  if (data.size() == 0) return keep;
  for (std::size_t k = 0; k < data.x.front().size(); ++k)
    for (std::size_t i = 1; i < data.size(); ++i)
      if (data.x[i][k] != data.x[0][k]) {
        keep.push_back(k);
        break;
      }
  return keep;
}

inline std::vector<double> select(std::span<const double> x, const std::vector<std::size_t>& cols) {
  std::vector<double> out;
  for (auto k : cols) out.push_back(x[k]);
  return out;
}

inline TrialRecord simulate_reg(const ScenarioSpec& sc, const SimConfig& cfg,
                                const PatientStream& ps, std::uint64_t seed) {
  TrialRecord r = start_record(DesignId::reg, sc);
  Rng rng(seed);
  ProbitData data;
  std::optional<RegFit> fit;
  std::vector<std::size_t> cols;
  const std::vector<bool> active(static_cast<std::size_t>(sc.n_arms()), true);
  auto refit = [&] {
    const auto now = varying_markers(data);
    if (now != cols) fit.reset();
    cols = now;
    ProbitData reduced;
    for (std::size_t i = 0; i < data.size(); ++i)
      reduced.add(select(data.x[i], cols), data.arm[i], data.y[i]);
    try {
      fit = probit_fit(reduced, cfg.reg_coding, sc.n_arms(), fit ? &*fit : nullptr);
    } catch (const Error&) {
      fit.reset();
    }
  };
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.max_patients); ++i) {
    const bool runin = i < static_cast<std::size_t>(cfg.n_runin);
    if (i == static_cast<std::size_t>(cfg.n_runin)) refit();
    const int arm = runin ? er_assign(rng, sc.n_arms())
                          : reg_assign(fit ? &*fit : nullptr, select(ps.row(i), cols), active, rng);
    const int y = observe(sc, ps, i, arm);
    data.add(ps.row(i), arm, y);
    if (!runin) {
      tally(r, sc, ps, i, arm, y);
      refit();
    }
  }
  r.stop_size = cfg.max_patients;
  finish(r, cfg);
  return r;
}

}  // namespace detail

// Seeds for one replicate: the patient stream and each design's own stream.
inline std::uint64_t stream_seed(std::uint64_t master, std::size_t replicate) {
  return derive_seed(master, replicate, 1);
}
inline std::uint64_t design_seed(std::uint64_t master, std::size_t replicate, DesignId d) {
  return derive_seed(master, replicate, 16 + static_cast<std::uint64_t>(d));
}

inline TrialRecord simulate_trial(const ScenarioSpec& sc, DesignId design, const SimConfig& cfg,
                                  const PatientStream& ps, std::uint64_t seed,
                                  std::shared_ptr<const PartitionCatalog> catalog = nullptr) {
  cfg.validate();
  require(ps.size() > static_cast<std::size_t>(cfg.max_patients), ErrorCode::invalid_argument,
          "patient stream needs N + 1 rows");
  switch (design) {
    case DesignId::suba: return detail::simulate_suba(sc, cfg, ps, seed, std::move(catalog));
    case DesignId::er: return detail::simulate_er(sc, cfg, ps, seed);
    case DesignId::ar: return detail::simulate_ar(sc, cfg, ps, seed);
    case DesignId::reg: return detail::simulate_reg(sc, cfg, ps, seed);
  }
  fail(ErrorCode::invalid_argument, "unknown design");
}

// Convenience overload drawing the replicate's stream from a master seed.
inline TrialRecord simulate_trial(int scenario, DesignId design, const SimConfig& cfg,
                                  std::uint64_t master, std::size_t replicate = 0) {
  const auto sc = ScenarioSpec::get(scenario);
  const auto ps = make_patient_stream(sc, static_cast<std::size_t>(cfg.max_patients) + 1,
                                      stream_seed(master, replicate));
  auto r = simulate_trial(sc, design, cfg, ps, design_seed(master, replicate, design));
  r.replicate = replicate;
  return r;
}

struct StudyConfig {
  int scenario = 2;
  std::vector<DesignId> designs{DesignId::suba, DesignId::er, DesignId::ar, DesignId::reg};
  std::size_t replicates = 200;
  std::uint64_t seed = 20240601;
  SimConfig sim;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate() const {
    ScenarioSpec::get(scenario);
    require(replicates >= 1, ErrorCode::invalid_argument, "replicates must be at least 1");
    require(!designs.empty(), ErrorCode::invalid_argument, "no design selected");
    sim.validate();
  }
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  MeanSe m;
  m.n = v.size();
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return m;
}

struct DesignSummary {
  DesignId design = DesignId::suba;
  std::vector<MeanSe> anp;                       // per arm
  std::vector<std::vector<MeanSe>> anp_subset;   // [subset][arm]
  MeanSe orr;                                    // over replicates with a defined ORR
  MeanSe stop_size;
  double drop_fraction = 0.0;  // replicates with at least one drop
};

// SUBA minus one comparator, paired by replicate.
struct OrrComparison {
  DesignId other = DesignId::er;
  std::vector<double> diff;  // per replicate with both ORRs defined
  MeanSe mean_diff;
  double mean_abs_diff = 0.0;
  double fraction_suba_better = 0.0;  // strictly higher ORR
};

struct StudyResult {
  StudyConfig config;
  std::vector<std::vector<TrialRecord>> records;  // [design index][replicate]
  std::vector<DesignSummary> summaries;
  std::vector<OrrComparison> comparisons;
  // Fraction of SUBA replicates ending with q(1) > q(2), and q(1) > q(3).
  std::optional<double> fraction_q1_over_q2;
  std::optional<double> fraction_q1_over_q3;

  const std::vector<TrialRecord>* records_for(DesignId d) const {
    for (std::size_t j = 0; j < config.designs.size(); ++j)
      if (config.designs[j] == d) return &records[j];
    return nullptr;
  }
  const DesignSummary* summary_for(DesignId d) const {
    for (const auto& s : summaries)
      if (s.design == d) return &s;
    return nullptr;
  }
  const OrrComparison* comparison_with(DesignId d) const {
    for (const auto& c : comparisons)
      if (c.other == d) return &c;
    return nullptr;
  }
};

inline DesignSummary summarize(DesignId d, const std::vector<TrialRecord>& recs,
                               const ScenarioSpec& sc) {
  DesignSummary s;
  s.design = d;
  const auto T = static_cast<std::size_t>(sc.n_arms());
  std::vector<double> v;
  for (std::size_t t = 0; t < T; ++t) {
    v.clear();
    for (const auto& r : recs) v.push_back(r.np[t]);
    s.anp.push_back(mean_se(v));
  }
  for (std::size_t b = 0; sc.has_subsets() && b < static_cast<std::size_t>(sc.n_subsets()); ++b) {
    s.anp_subset.emplace_back();
    for (std::size_t t = 0; t < T; ++t) {
      v.clear();
      for (const auto& r : recs) v.push_back(r.np_subset[b][t]);
      s.anp_subset.back().push_back(mean_se(v));
    }
  }
  v.clear();
  for (const auto& r : recs)
    if (r.orr_value) v.push_back(*r.orr_value);
  s.orr = mean_se(v);
  v.clear();
  std::size_t dropped = 0;
  for (const auto& r : recs) {
    v.push_back(r.stop_size);
    dropped += r.drops.empty() ? 0 : 1;
  }
  s.stop_size = mean_se(v);
  s.drop_fraction = recs.empty() ? 0.0 : static_cast<double>(dropped) / static_cast<double>(recs.size());
  return s;
}

namespace detail {

// Runs task(i) for i in [0, n) on a small worker pool. Results must be
// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& task) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline StudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  const auto sc = ScenarioSpec::get(cfg.scenario);
  StudyResult res;
  res.config = cfg;
  res.records.assign(cfg.designs.size(), std::vector<TrialRecord>(cfg.replicates));
  std::shared_ptr<const PartitionCatalog> catalog;
  for (auto d : cfg.designs)
    if (d == DesignId::suba)
      catalog = shared_catalog(PriorParams::uniform(scenario_markers, cfg.sim.phi, cfg.sim.max_rounds));

  detail::parallel_for(cfg.replicates, cfg.threads, [&](std::size_t rep) {
    const auto ps = make_patient_stream(sc, static_cast<std::size_t>(cfg.sim.max_patients) + 1,
                                        stream_seed(cfg.seed, rep));
    for (std::size_t j = 0; j < cfg.designs.size(); ++j) {
      const auto d = cfg.designs[j];
      auto r = simulate_trial(sc, d, cfg.sim, ps, design_seed(cfg.seed, rep, d), catalog);
      r.replicate = rep;
      res.records[j][rep] = std::move(r);
    }
  });

  for (std::size_t j = 0; j < cfg.designs.size(); ++j)
    res.summaries.push_back(summarize(cfg.designs[j], res.records[j], sc));

  if (const auto* suba = res.records_for(DesignId::suba)) {
    for (std::size_t j = 0; j < cfg.designs.size(); ++j) {
      if (cfg.designs[j] == DesignId::suba) continue;
      OrrComparison c;
      c.other = cfg.designs[j];
      std::size_t better = 0;
      double abs_sum = 0.0;
      for (std::size_t rep = 0; rep < cfg.replicates; ++rep) {
        const auto& a = (*suba)[rep];
        const auto& b = res.records[j][rep];
        if (!a.orr_value || !b.orr_value) continue;
        const double d = *a.orr_value - *b.orr_value;
        c.diff.push_back(d);
        abs_sum += std::abs(d);
        better += d > 0.0 ? 1 : 0;
      }
      c.mean_diff = mean_se(c.diff);
      if (!c.diff.empty()) {
        c.mean_abs_diff = abs_sum / static_cast<double>(c.diff.size());
        c.fraction_suba_better = static_cast<double>(better) / static_cast<double>(c.diff.size());
      }
      res.comparisons.push_back(std::move(c));
    }
    std::size_t over2 = 0, over3 = 0;
    for (const auto& r : *suba) {
      over2 += r.final_q[0] > r.final_q[1] ? 1 : 0;
      over3 += r.final_q[0] > r.final_q[2] ? 1 : 0;
    }
    res.fraction_q1_over_q2 = static_cast<double>(over2) / static_cast<double>(suba->size());
    res.fraction_q1_over_q3 = static_cast<double>(over3) / static_cast<double>(suba->size());
  }
  return res;
}

enum class SweepAxis { phi, max_patients };

inline const char* to_string(SweepAxis a) { return a == SweepAxis::phi ? "phi" : "N"; }

inline SweepAxis parse_axis(const std::string& s) {
  if (s == "phi") return SweepAxis::phi;
  if (s == "N" || s == "n") return SweepAxis::max_patients;
  fail(ErrorCode::invalid_argument, "unknown sweep axis '" + s + "' (expected phi or N)");
}

inline std::vector<double> default_sweep_values(SweepAxis a) {
  if (a == SweepAxis::phi) return {0.2, 0.5, 0.8};
  return {100, 200, 300};
}

struct SweepPoint {
  double value = 0.0;
  StudyResult result;
};

// One study per axis value. On the N axis the run-in is capped at N.
inline std::vector<SweepPoint> sensitivity_sweep(const StudyConfig& base, SweepAxis axis,
                                                 std::vector<double> values = {}) {
  if (values.empty()) values = default_sweep_values(axis);
  std::vector<SweepPoint> out;
  for (double v : values) {
    StudyConfig cfg = base;
    if (axis == SweepAxis::phi) {
      cfg.sim.phi = v;
    } else {
      require(v >= 1.0 && v == std::floor(v), ErrorCode::invalid_argument, "N values must be positive integers");
      cfg.sim.max_patients = static_cast<int>(v);
      cfg.sim.n_runin = std::min(cfg.sim.n_runin, cfg.sim.max_patients);
    }
    out.push_back({v, run_study(cfg)});
  }
  return out;
}

}  // namespace suba

// Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "oracle.hpp"
#include "oracle_check.hpp"
#include "suba/probit.hpp"
#include "suba/scenarios.hpp"
#include "suba/service.hpp"
#include "suba/simulator.hpp"
#include "suba/study_io.hpp"

using namespace suba;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

StudyResult study(int scenario, std::vector<DesignId> designs, SimConfig sim = {}) {
  StudyConfig c;
  c.scenario = scenario;
  c.designs = std::move(designs);
  c.replicates = 200;
  c.sim = std::move(sim);
  const auto t0 = std::chrono::steady_clock::now();
  auto r = run_study(c);
  std::fprintf(stderr, "  scenario %d study: %.1f s\n", scenario, seconds_since(t0));
  return r;
}

const std::vector<DesignId> all4{DesignId::suba, DesignId::er, DesignId::ar, DesignId::reg};

void oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto out = oracle::sweep(20240601, 20);
  const double secs = seconds_since(t0);
  const double worst = out.worst.max();
  report("oracle-equivalence", out.fixtures == 56 * 20 && worst < 1e-12,
         fmt("%d fixtures, worst |w| diff %.2e, worst |q| diff %.2e, %.2f s", out.fixtures, out.worst.weight,
             out.worst.q, secs));
}

void catalog_counts() {
  bool ok = true;
  std::string detail;
  for (auto [K, expected] : {std::pair{1, std::size_t{26}}, std::pair{4, std::size_t{40805}}}) {
    const auto a = enumerate_layouts(K, 3, default_layout_cap).size();
    const auto b = oracle::all_trees(K, 3).size();
    const auto c = count_layouts(K, 3, default_layout_cap);
    ok = ok && a == expected && b == expected && c == expected;
    detail += fmt("K=%d: %zu / %zu / %zu (expect %zu)  ", K, a, b, static_cast<std::size_t>(c), expected);
  }
  report("catalog-counts", ok, detail);
}

void scenario_1(const StudyResult& r) {
  const auto* s = r.summary_for(DesignId::suba);
  const double anp1 = s->anp[0].mean;
  const double beats = r.comparison_with(DesignId::reg)->fraction_suba_better;
  report("scenario-1", anp1 >= 155 && anp1 <= 195 && beats >= 0.55,
         fmt("ANP arm 1 = %.2f in [155,195]; SUBA > Reg in %.3f of replicates (>= 0.55)", anp1, beats));
}

void scenario_2(const StudyResult& r) {
  const auto* s = r.summary_for(DesignId::suba);
  const double s1 = s->anp_subset[0][0].mean;
  const double s2 = s->anp_subset[1][2].mean;
  const double beats = r.comparison_with(DesignId::er)->fraction_suba_better;
  report("scenario-2", s1 >= 62 && s1 <= 83 && s2 >= 63 && s2 <= 84 && beats >= 0.80,
         fmt("S1 arm-1 ANP = %.2f in [62,83]; S2 arm-3 ANP = %.2f in [63,84]; SUBA > ER in %.3f (>= 0.80)", s1,
             s2, beats));
}

void scenarios_4_5() {
  bool ok = true;
  std::string detail;
  for (auto [sc, target] : {std::pair{4, 167.63}, std::pair{5, 215.07}}) {
    const auto r = study(sc, {DesignId::suba});
    const auto* s = r.summary_for(DesignId::suba);
    const double anp3 = s->anp[2].mean;
    const double stop = s->stop_size.mean;
    ok = ok && anp3 < 5 && std::abs(stop - target) <= 30;
    detail += fmt("S%d: arm-3 ANP %.2f (< 5), stop size %.2f (%.2f +- 30)  ", sc, anp3, stop, target);
  }
  report("scenarios-4-5", ok, detail);
}

void scenario_6() {
  const auto r = study(6, all4);
  bool ok = true;
  std::string detail;
  for (auto d : all4) {
    const double orr = r.summary_for(d)->orr.mean;
    ok = ok && std::abs(orr - 0.4) < 0.02;
    detail += fmt("%s %.4f, ", to_string(d), orr);
  }
  const double gap = r.comparison_with(DesignId::er)->mean_abs_diff;
  ok = ok && gap < 0.02;
  report("scenario-6", ok, detail + fmt("mean |SUBA - ER| = %.4f (< 0.02)", gap));
}

void sensitivity(const StudyResult& s1_at_300, const StudyResult& s2_at_half) {
  StudyConfig base;
  base.scenario = 1;
  base.designs = {DesignId::suba};
  base.replicates = 200;
  const auto n_pts = sensitivity_sweep(base, SweepAxis::max_patients, {100, 200});
  const double f100 = n_pts[0].result.fraction_q1_over_q2.value_or(-1);
  const double f200 = n_pts[1].result.fraction_q1_over_q2.value_or(-1);
  const double f300 = s1_at_300.fraction_q1_over_q2.value_or(-1);
  const bool monotone = f100 < f200 && f200 < f300;
  const bool close = std::abs(f100 - 0.752) <= 0.08 && std::abs(f200 - 0.838) <= 0.08 && std::abs(f300 - 0.884) <= 0.08;
  report("sensitivity-N", monotone && close,
         fmt("q1>q2 fraction %.3f / %.3f / %.3f (targets 0.752 / 0.838 / 0.884 +- 0.08, increasing)", f100, f200,
             f300));

  base.scenario = 2;
  const auto phi_pts = sensitivity_sweep(base, SweepAxis::phi, {0.2, 0.8});
  const double a = phi_pts[0].result.summary_for(DesignId::suba)->anp_subset[0][0].mean;
  const double b = s2_at_half.summary_for(DesignId::suba)->anp_subset[0][0].mean;
  const double c = phi_pts[1].result.summary_for(DesignId::suba)->anp_subset[0][0].mean;
  const double spread = std::max({a, b, c}) - std::min({a, b, c});
  report("sensitivity-phi", spread < 6,
         fmt("S1 arm-1 ANP %.2f / %.2f / %.2f at phi 0.2 / 0.5 / 0.8, spread %.2f (< 6)", a, b, c, spread));
}

std::string study_bytes(unsigned threads) {
  StudyConfig c;
  c.scenario = 2;
  c.replicates = 8;
  c.seed = 77;
  c.threads = threads;
  c.sim.max_patients = 80;
  c.sim.n_runin = 30;
  c.sim.max_rounds = 2;
  const auto r = run_study(c);
  std::ostringstream os;
  os << study_json(r).dump(2) << '\n';
  write_replicates_csv(os, r);
  write_orr_diff_csv(os, r);
  return os.str();
}

void drive_trial(TrialService& s, const std::string& id, int scenario, std::uint64_t seed) {
  const auto sc = ScenarioSpec::get(scenario);
  Rng rng(seed);
  while (s.state(id)["phase"] != "stopped") {
    std::vector<double> x(4);
    sc.draw_markers(rng, x);
    const auto r = s.enroll(id, {{"x", x}});
    const int arm = r["arm"].get<int>() - 1;
    s.record_outcome(id, r["patient"].get<std::int64_t>(), {{"y", uniform01(rng) < sc.true_response(arm, x) ? 1 : 0}});
  }
}

void determinism() {
  const auto a = study_bytes(1), b = study_bytes(1), c = study_bytes(3);
  const bool study_ok = a == b && a == c;

  const auto dir = fs::temp_directory_path() / ("suba_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  bool journal_ok = true;
  std::size_t events = 0;
  std::vector<std::string> ids;
  {
    TrialService::Options opt;
    opt.journal_dir = dir;
    TrialService s(opt);
    for (int sc : {2, 4}) {
      const std::string id =
          s.create_trial({{"N", 120}, {"runin", 40}, {"max_rounds", 2}, {"seed", 11 + sc}})["id"];
      drive_trial(s, id, sc, 100 + static_cast<std::uint64_t>(sc));
      ids.push_back(id);
    }
    for (const auto& id : ids) {
      const auto recorded = TrialService::read_journal(dir / (id + ".jsonl"));
      const auto replayed = TrialService::replay_events(recorded);
      journal_ok = journal_ok && replayed.size() == recorded.size();
      for (std::size_t i = 0; journal_ok && i < recorded.size(); ++i)
        journal_ok = replayed[i].dump() == recorded[i].dump();
      journal_ok = journal_ok && Json(recorded) == s.events(id);
      events += recorded.size();
    }
    // A restarted service rebuilds the same streams from disk.
    TrialService again(opt);
    for (const auto& id : ids) journal_ok = journal_ok && again.events(id) == s.events(id);
  }
  fs::remove_all(dir);
  report("determinism", study_ok && journal_ok,
         fmt("study bytes identical across re-runs and thread counts: %s (%zu bytes); %zu journal events replay "
             "identically: %s",
             study_ok ? "yes" : "no", a.size(), events, journal_ok ? "yes" : "no"));
}

void probit_checks() {
  Rng rng(2024);
  ProbitData d;
  for (int i = 0; i < 5000; ++i) {
    const std::vector<double> x{uniform(rng, -1, 1)};
    d.add(x, 0, uniform01(rng) < normal_cdf(0.8 * x[0]) ? 1 : 0);
  }
  const auto fit = probit_fit(d, ArmCoding::categorical, 1);
  const double beta = fit.marker_effects[0];

  Rng rng2(7);
  ProbitData e;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x{uniform(rng2, -1, 1), uniform(rng2, -1, 1)};
    const int arm = static_cast<int>(uniform_index(rng2, 3));
    e.add(x, arm, uniform01(rng2) < normal_cdf(0.2 * arm - 0.1 + 0.5 * x[0] - 0.4 * x[1]) ? 1 : 0);
  }
  double worst = 0.0;
  for (auto coding : {ArmCoding::categorical, ArmCoding::numeric}) {
    const auto X = probit::design_matrix(e, coding, 3);
    Eigen::VectorXd b(X.cols());
    for (Eigen::Index j = 0; j < b.size(); ++j) b(j) = uniform(rng2, -0.5, 0.5);
    const Eigen::VectorXd g = probit::gradient(X, e.y, b);
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      const double h = 1e-5;
      Eigen::VectorXd up = b, dn = b;
      up(j) += h;
      dn(j) -= h;
      const double fd = (probit::log_likelihood(X, e.y, up) - probit::log_likelihood(X, e.y, dn)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g(j)) / std::max(1.0, std::abs(g(j))));
    }
  }
  report("probit", worst < 1e-5 && fit.converged && std::abs(beta - 0.8) <= 0.1,
         fmt("gradient vs finite difference rel. error %.2e (< 1e-5); planted 0.8 -> %.4f (n=5000)", worst, beta));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    oracle_equivalence();
    catalog_counts();
    probit_checks();
    determinism();
    const auto s1 = study(1, all4);
    scenario_1(s1);
    const auto s2 = study(2, {DesignId::suba, DesignId::er});
    scenario_2(s2);
    scenarios_4_5();
    scenario_6();
    sensitivity(s1, s2);
  } catch (const std::exception& e) {
    report("run", false, std::string("aborted: ") + e.what());
  }
  std::printf("%d criteria failed; %.0f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}

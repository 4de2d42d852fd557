#include <gtest/gtest.h>

#include <cmath>

#include "suba/design.hpp"
#include "suba/scenarios.hpp"

using namespace suba;

namespace {

DesignConfig small_config(int K = 2, int T = 3, int N = 60, int runin = 20) {
  DesignConfig c;
  c.max_patients = N;
  c.n_runin = runin;
  c.n_arms = T;
  c.prior = PriorParams::uniform(K, 0.5, 2);
  c.grid_points = 5;
  c.seed = 99;
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::invalid_argument;
}

}  // namespace

TEST(SelectArm, ArgmaxAndTies) {
  Rng rng(1);
  const std::vector<bool> all(3, true);
  EXPECT_EQ(select_arm(std::vector<double>{0.7, 0.3, 0.3}, all, AllocationMode::argmax, 1, rng), 0);
  EXPECT_EQ(select_arm(std::vector<double>{0.7, 0.3, 0.9}, {true, true, false}, AllocationMode::argmax, 1, rng), 0);
  std::vector<int> hits(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) hits[select_arm(std::vector<double>{0.5, 0.5, 0.5}, all, AllocationMode::argmax, 1, rng)]++;
  for (int h : hits) EXPECT_NEAR(h, n / 3.0, 3 * std::sqrt(n * (1.0 / 3) * (2.0 / 3)));
  EXPECT_THROW(select_arm(std::vector<double>{0.5}, {false}, AllocationMode::argmax, 1, rng), Error);
}

TEST(SelectArm, PowerRandomization) {
  Rng rng(2);
  const std::vector<bool> all(3, true);
  const std::vector<double> q{0.5, 0.25, 0.25};
  std::vector<int> hits(3, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) hits[select_arm(q, all, AllocationMode::power_randomization, 1.0, rng)]++;
  const std::vector<double> p{0.5, 0.25, 0.25};
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(hits[t], n * p[t], 3 * std::sqrt(n * p[t] * (1 - p[t])));
  for (int i = 0; i < 1000; ++i)
    EXPECT_NE(select_arm(q, {true, false, true}, AllocationMode::power_randomization, 2.0, rng), 1);
}

TEST(SelectArm, InvariantUnderIncreasingTransform) {
  Rng a(5), b(5);
  const std::vector<bool> all(4, true);
  Rng src(9);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> q(4);
    for (auto& v : q) v = 0.25 * static_cast<double>(uniform_index(src, 4));  // frequent ties
    std::vector<double> tq(4);
    for (int t = 0; t < 4; ++t) tq[t] = std::exp(3.0 * q[t]) - 7.0;
    EXPECT_EQ(select_arm(q, all, AllocationMode::argmax, 1, a), select_arm(tq, all, AllocationMode::argmax, 1, b));
  }
}

TEST(DesignConfig, Validation) {
  auto c = small_config();
  c.n_runin = c.max_patients + 1;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.grid_points = 1;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.allocation = AllocationMode::power_randomization;
  c.power_c = 0;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.reference_points = {{0.0}};
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::dimension_mismatch);
}

TEST(RunIn, UniformCountsAndPhaseTransition) {
  auto cfg = small_config(2, 3, 300, 100);
  TrialState st(cfg);
  Rng rng(17);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(st.phase, Phase::run_in);
    counts[runin_assign(st, cfg, rng, std::vector<double>{0.0, 0.0})]++;
  }
  EXPECT_EQ(counts[0] + counts[1] + counts[2], 100);
  for (int c : counts) EXPECT_NEAR(c, 33.3, 3 * std::sqrt(100 * (1.0 / 3) * (2.0 / 3)));
  EXPECT_EQ(st.phase, Phase::adaptive);
  EXPECT_EQ(code_of([&] { runin_assign(st, cfg, rng, std::vector<double>{0.0, 0.0}); }), ErrorCode::invalid_phase);
}

TEST(RunIn, TwoArmsAndReproducible) {
  auto cfg = small_config(1, 2, 10, 10);
  std::vector<int> first;
  for (int rep = 0; rep < 2; ++rep) {
    SubaTrial t(cfg);
    std::vector<int> arms;
    for (int i = 0; i < 10; ++i) arms.push_back(t.enroll(std::vector<double>{0.1 * i}).arm);
    for (int a : arms) EXPECT_TRUE(a == 0 || a == 1);
    if (rep == 0) first = arms;
    else EXPECT_EQ(arms, first);
  }
}

TEST(Adaptive, RequiresPhaseAndFreshPosterior) {
  auto cfg = small_config(1, 2, 10, 2);
  SubaTrial trial(cfg);
  TrialState st(cfg);
  Rng rng(1);
  const auto post = trial.posterior();
  EXPECT_EQ(code_of([&] { adaptive_assign(st, post, cfg, rng, std::vector<double>{0.0}); }), ErrorCode::invalid_phase);
  runin_assign(st, cfg, rng, std::vector<double>{0.0});
  runin_assign(st, cfg, rng, std::vector<double>{1.0});
  EXPECT_EQ(code_of([&] { adaptive_assign(st, post, cfg, rng, std::vector<double>{0.0}); }), ErrorCode::stale_posterior);
  EXPECT_EQ(code_of([&] { exclusion_check(st, post, cfg); }), ErrorCode::stale_posterior);
}

TEST(Adaptive, AssignsArgmaxWithQ) {
  auto cfg = small_config(1, 2, 40, 8);
  SubaTrial trial(cfg);
  for (int i = 0; i < 8; ++i) {
    const auto e = trial.enroll(std::vector<double>{-1.0 + 0.25 * i});
    // Crossing responses: arm 0 works on the left, arm 1 on the right.
    const bool left = -1.0 + 0.25 * i < 0.0;
    trial.record_outcome(e.patient, (e.arm == 0) == left ? 1 : 0);
  }
  ASSERT_EQ(trial.state().phase, Phase::adaptive);
  ASSERT_EQ(trial.state().n_active(), 2u);
  for (double x : {-0.9, 0.3, 0.8}) {
    const auto e = trial.enroll(std::vector<double>{x});
    ASSERT_EQ(e.q.size(), 2u);
    EXPECT_EQ(e.phase, Phase::adaptive);
    if (e.q[0] != e.q[1]) EXPECT_EQ(e.arm, e.q[0] > e.q[1] ? 0 : 1);
    trial.record_outcome(e.patient, 1);
  }
}

TEST(Exclusion, SymmetricPriorDropsNothing) {
  auto cfg = small_config(2, 3, 10, 1);
  SubaTrial trial(cfg);
  trial.enroll(std::vector<double>{0.1, 0.2});
  TrialState st = trial.state();
  // No outcomes: every arm has q = 1/2 everywhere.
  const auto res = exclusion_check(st, trial.posterior(), cfg);
  EXPECT_TRUE(res.dropped.empty());
  EXPECT_EQ(st.n_active(), 3u);
}

TEST(Exclusion, IdenticalArmsAreProtected) {
  auto cfg = small_config(1, 2, 100, 40);
  SubaTrial trial(cfg);
  // Pair up patients so both arms see the same outcomes at the same places.
  TrialState mirrored(cfg);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> x{-1.0 + i / 10.0};
    const int y = i % 3 == 0 ? 1 : 0;
    mirrored.data.add(x, 0, y);
    mirrored.data.add(x, 1, y);
  }
  mirrored.phase = Phase::adaptive;
  auto post = rebuild_posterior(trial.catalog(), mirrored.data, cfg.hyper, 2, mirrored.data_version);
  const auto res = exclusion_check(mirrored, post, cfg);
  EXPECT_TRUE(res.dropped.empty());
  EXPECT_EQ(mirrored.n_active(), 2u);
}

TEST(Exclusion, InferiorArmDroppedAndTrialStops) {
  auto cfg = small_config(2, 2, 200, 60);
  cfg.seed = 4;
  SubaTrial trial(cfg);
  Rng rng(12);
  bool dropped = false;
  for (int i = 0; i < 200 && trial.enrollment_open(); ++i) {
    const std::vector<double> x{uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const auto e = trial.enroll(x);
    const double theta = e.arm == 0 ? 0.7 : 0.1;
    const auto delta = trial.record_outcome(e.patient, uniform01(rng) < theta ? 1 : 0);
    if (!delta.dropped.empty()) {
      EXPECT_EQ(delta.dropped, std::vector<int>{1});
      EXPECT_TRUE(delta.stopped);
      EXPECT_EQ(delta.stop_reason, StopReason::single_arm_left);
      dropped = true;
    }
  }
  ASSERT_TRUE(dropped);
  const auto& st = trial.state();
  EXPECT_EQ(st.phase, Phase::stopped);
  EXPECT_EQ(st.active_arms(), std::vector<int>{0});
  ASSERT_EQ(st.drops.size(), 1u);
  EXPECT_EQ(st.drops[0].arm, 1);
  EXPECT_EQ(st.drops[0].enrolled, st.stop_enrolled);
  EXPECT_GE(st.stop_enrolled, 60u);
  EXPECT_EQ(code_of([&] { trial.enroll(std::vector<double>{0, 0}); }), ErrorCode::invalid_phase);
  EXPECT_EQ(code_of([&] { trial.record_outcome(0, 1); }), ErrorCode::invalid_phase);

  const auto report = trial.final_report();
  EXPECT_EQ(report.surviving_arms, std::vector<int>{0});
  EXPECT_EQ(report.stop_reason, StopReason::single_arm_left);
  ASSERT_EQ(report.drops.size(), 1u);
  EXPECT_EQ(report.assigned[0] + report.assigned[1], static_cast<int>(st.enrolled()));
}

TEST(Exclusion, GridSpansData) {
  TrialData d(2);
  Rng rng(3);
  for (int i = 0; i < 30; ++i) d.add(std::vector<double>{uniform(rng, -1, 1), uniform(rng, -3, 2)});
  const auto g = GridSpec::from_data(d, 4);
  EXPECT_EQ(g.size(), 16u);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_GE(d.markers(i, k), g.lower()[k]);
      EXPECT_LE(d.markers(i, k), g.upper()[k]);
    }
  std::vector<double> x(2);
  g.point(0, x);
  EXPECT_EQ(x[0], g.lower()[0]);
  EXPECT_EQ(x[1], g.lower()[1]);
  g.point(15, x);
  EXPECT_EQ(x[0], g.upper()[0]);
  EXPECT_EQ(x[1], g.upper()[1]);
  const auto r = GridSpec::from_points({{0.5, 0.5}, {-0.5, 0.1}});
  EXPECT_EQ(r.size(), 2u);
  r.point(1, x);
  EXPECT_EQ(x, (std::vector<double>{-0.5, 0.1}));
}

TEST(RecordOutcome, ErrorsAndRunInSkipsExclusion) {
  auto cfg = small_config(1, 2, 4, 2);
  SubaTrial trial(cfg);
  const auto a = trial.enroll(std::vector<double>{0.0});
  EXPECT_EQ(code_of([&] { trial.record_outcome(5, 1); }), ErrorCode::unknown_patient);
  EXPECT_EQ(code_of([&] { trial.record_outcome(a.patient, 2); }), ErrorCode::invalid_argument);
  const auto delta = trial.record_outcome(a.patient, 1);
  EXPECT_FALSE(delta.exclusion_checked);
  EXPECT_EQ(code_of([&] { trial.record_outcome(a.patient, 0); }), ErrorCode::duplicate_outcome);
  const auto b = trial.enroll(std::vector<double>{1.0});
  EXPECT_TRUE(trial.record_outcome(b.patient, 0).exclusion_checked);  // first check right after run-in
}

TEST(RecordOutcome, StopsAtMaxEnrollment) {
  auto cfg = small_config(1, 2, 5, 5);
  SubaTrial trial(cfg);
  std::vector<std::size_t> ids;
  for (int i = 0; i < 5; ++i) ids.push_back(trial.enroll(std::vector<double>{0.2 * i}).patient);
  EXPECT_FALSE(trial.enrollment_open());
  EXPECT_EQ(code_of([&] { trial.enroll(std::vector<double>{0.0}); }), ErrorCode::invalid_phase);
  EXPECT_EQ(code_of([&] { trial.final_report(); }), ErrorCode::invalid_phase);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_FALSE(trial.record_outcome(ids[i], 1).stopped);
  const auto last = trial.record_outcome(ids[4], 0);
  EXPECT_TRUE(last.stopped);
  EXPECT_EQ(last.stop_reason, StopReason::max_enrollment);
  // Run-in equal to N: the report comes from run-in data alone.
  const auto report = trial.final_report();
  EXPECT_EQ(report.enrolled, 5u);
  EXPECT_EQ(report.responders[0] + report.responders[1], 4);
  EXPECT_EQ(code_of([&] { trial.record_outcome(ids[0], 1); }), ErrorCode::invalid_phase);
}

TEST(SingleArm, NeverStopsEarly) {
  auto cfg = small_config(1, 1, 30, 5);
  SubaTrial trial(cfg);
  Rng rng(2);
  for (int i = 0; i < 30; ++i) {
    const auto e = trial.enroll(std::vector<double>{uniform(rng, -1, 1)});
    EXPECT_EQ(e.arm, 0);
    const auto d = trial.record_outcome(e.patient, i % 2);
    EXPECT_TRUE(d.dropped.empty());
  }
  EXPECT_EQ(trial.state().stop_reason, StopReason::max_enrollment);
}

TEST(SubaTrial, DeterministicAndActiveSetMonotone) {
  const auto sc = ScenarioSpec::get(4);
  auto run = [&](std::vector<int>& arms, std::vector<DropEvent>& drops) {
    DesignConfig cfg;
    cfg.max_patients = 150;
    cfg.n_runin = 60;
    cfg.prior = PriorParams::uniform(4, 0.5, 3);
    cfg.seed = 2024;
    SubaTrial trial(cfg);
    Rng rng(77);
    std::vector<bool> prev_active = trial.state().active;
    for (int i = 0; i < 150 && trial.enrollment_open(); ++i) {
      std::vector<double> x(4);
      sc.draw_markers(rng, x);
      const auto e = trial.enroll(x);
      EXPECT_TRUE(trial.state().active[static_cast<std::size_t>(e.arm)] || e.phase == Phase::run_in);
      arms.push_back(e.arm);
      trial.record_outcome(e.patient, uniform01(rng) < sc.true_response(e.arm, x) ? 1 : 0);
      for (std::size_t t = 0; t < 3; ++t) EXPECT_TRUE(prev_active[t] || !trial.state().active[t]);
      prev_active = trial.state().active;
    }
    drops = trial.state().drops;
  };
  std::vector<int> a1, a2;
  std::vector<DropEvent> d1, d2;
  run(a1, d1);
  run(a2, d2);
  EXPECT_EQ(a1, a2);
  ASSERT_EQ(d1.size(), d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) {
    EXPECT_EQ(d1[i].arm, d2[i].arm);
    EXPECT_EQ(d1[i].enrolled, d2[i].enrolled);
  }
}

TEST(SubaTrial, ScenarioTwoReportSplitsOnMarkerTwo) {
  const auto sc = ScenarioSpec::get(2);
  DesignConfig cfg;
  cfg.prior = PriorParams::uniform(4, 0.5, 3);
  cfg.seed = 8;
  SubaTrial trial(cfg);
  Rng rng(31);
  for (int i = 0; i < 300 && trial.enrollment_open(); ++i) {
    std::vector<double> x(4);
    sc.draw_markers(rng, x);
    const auto e = trial.enroll_fast(x);
    trial.record_outcome(e.patient, uniform01(rng) < sc.true_response(e.arm, x) ? 1 : 0);
  }
  const auto report = trial.final_report();
  EXPECT_EQ(report.summary.partition.layout.marker(0), 2);
}

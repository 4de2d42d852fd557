#include <gtest/gtest.h>

#include <cmath>

#include "suba/comparators.hpp"
#include "suba/probit.hpp"
#include "suba/simulator.hpp"

using namespace suba;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::invalid_argument;
}

double ll_at(const ProbitData& d, ArmCoding coding, int T, const std::vector<double>& beta) {
  const auto X = probit::design_matrix(d, coding, T);
  return probit::log_likelihood(X, d.y, Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size())));
}

ProbitData random_probit(Rng& rng, int n, int T, std::size_t K, const std::vector<double>& arm_eff,
                         const std::vector<double>& marker_eff) {
  ProbitData d;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(K);
    for (auto& v : x) v = uniform(rng, -1, 1);
    const int a = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(T)));
    double eta = arm_eff[static_cast<std::size_t>(a)];
    for (std::size_t k = 0; k < K; ++k) eta += marker_eff[k] * x[k];
    d.add(x, a, uniform01(rng) < normal_cdf(eta) ? 1 : 0);
  }
  return d;
}

}  // namespace

TEST(ER, UniformWithinThreeSigma) {
  Rng rng(42);
  const int n = 10000;
  std::vector<int> hits(3, 0);
  for (int i = 0; i < n; ++i) hits[er_assign(rng, 3)]++;
  const double sd = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
  for (int h : hits) EXPECT_NEAR(h, n / 3.0, 3 * sd);
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(er_assign(a, 2), er_assign(b, 2));
}

TEST(AR, SubgroupsFromMarkerOne) {
  ARConfig cfg;
  EXPECT_EQ(cfg.n_subgroups(), 3u);
  EXPECT_EQ(cfg.subgroup_of(std::vector<double>{-0.7, 0, 0, 0}), 0u);
  EXPECT_EQ(cfg.subgroup_of(std::vector<double>{-0.5, 0, 0, 0}), 1u);
  EXPECT_EQ(cfg.subgroup_of(std::vector<double>{0.5, 0, 0, 0}), 1u);
  EXPECT_EQ(cfg.subgroup_of(std::vector<double>{0.7, 0, 0, 0}), 2u);
  ARConfig four;
  four.boundaries = {-0.5, 0.0, 0.5};
  EXPECT_EQ(four.subgroup_of(std::vector<double>{-0.2}), 1u);
  EXPECT_EQ(four.subgroup_of(std::vector<double>{0.2}), 2u);
  EXPECT_EQ(four.subgroup_of(std::vector<double>{0.5}), 2u);
  EXPECT_EQ(four.subgroup_of(std::vector<double>{0.9}), 3u);
  ARConfig bad;
  bad.boundaries = {0.5, 0.5};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(AR, ProbabilitiesFromPosteriorMeans) {
  ARCounts counts(ARConfig{}, 3);
  const std::vector<double> x{0.0, 0, 0, 0};
  for (double p : counts.probabilities(x)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const std::vector<std::pair<int, int>> cells{{10, 8}, {10, 2}, {10, 5}};
  for (int t = 0; t < 3; ++t)
    for (int i = 0; i < cells[t].first; ++i) counts.add(x, t, i < cells[t].second ? 1 : 0);
  const auto means = counts.posterior_means(1);
  EXPECT_NEAR(means[0], 0.75, 1e-15);
  EXPECT_NEAR(means[1], 0.25, 1e-15);
  EXPECT_NEAR(means[2], 0.5, 1e-15);
  const auto p = counts.probabilities(x);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / 3.0, 1e-15);
  // Other subgroups are untouched.
  for (double v : counts.probabilities(std::vector<double>{0.9, 0, 0, 0})) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  Rng rng(3);
  std::vector<int> hits(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) hits[ar_assign(counts, x, rng)]++;
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(hits[t], n * p[t], 3 * std::sqrt(n * p[t] * (1 - p[t])));
}

TEST(Reg, AssignmentRules) {
  Rng rng(1);
  const std::vector<bool> all(3, true);
  RegFit numeric;
  numeric.coding = ArmCoding::numeric;
  numeric.n_arms = 3;
  numeric.arm_effects = {0.3};
  numeric.marker_effects = {0.5, -1.0};
  numeric.converged = true;
  for (double v : {-1.0, 0.0, 1.0}) EXPECT_EQ(reg_assign(&numeric, std::vector<double>{v, -v}, all, rng), 2);

  RegFit cat;
  cat.coding = ArmCoding::categorical;
  cat.n_arms = 3;
  cat.arm_effects = {0.5, 0.1, -0.2};
  cat.marker_effects = {0.0, 0.0};
  cat.converged = true;
  for (double v : {-1.0, 0.0, 1.0}) EXPECT_EQ(reg_assign(&cat, std::vector<double>{v, v}, all, rng), 0);
  EXPECT_EQ(reg_assign(&cat, std::vector<double>{0, 0}, {false, true, true}, rng), 1);

  std::vector<int> hits(3, 0);
  for (int i = 0; i < 3000; ++i) hits[reg_assign(nullptr, std::vector<double>{0, 0}, all, rng)]++;
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Probit, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  for (auto coding : {ArmCoding::categorical, ArmCoding::numeric}) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto d = random_probit(rng, 200, 3, 2, {0.2, -0.1, 0.4}, {0.6, -0.3});
      const auto X = probit::design_matrix(d, coding, 3);
      Eigen::VectorXd beta(X.cols());
      for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = uniform(rng, -0.5, 0.5);
      const Eigen::VectorXd g = probit::gradient(X, d.y, beta);
      for (Eigen::Index j = 0; j < beta.size(); ++j) {
        const double h = 1e-5;
        Eigen::VectorXd up = beta, dn = beta;
        up(j) += h;
        dn(j) -= h;
        const double fd = (probit::log_likelihood(X, d.y, up) - probit::log_likelihood(X, d.y, dn)) / (2 * h);
        EXPECT_NEAR(fd, g(j), 1e-5 * std::max(1.0, std::abs(g(j))));
      }
    }
  }
}

TEST(Probit, RecoversPlantedCoefficient) {
  Rng rng(2024);
  const auto d = random_probit(rng, 5000, 1, 1, {0.0}, {0.8});
  const auto fit = probit_fit(d, ArmCoding::categorical, 1);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.marker_effects[0], 0.8, 0.1);
  EXPECT_LT(fit.gradient_norm, 1e-8);
}

TEST(Probit, BalancedOutcomesGiveZero) {
  Rng rng(5);
  ProbitData d;
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> x{uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const int a = static_cast<int>(uniform_index(rng, 2));
    d.add(x, a, 1);
    d.add(x, a, 0);
  }
  const auto fit = probit_fit(d, ArmCoding::categorical, 2);
  std::vector<double> beta;
  for (double v : fit.arm_effects) beta.push_back(v);
  for (double v : fit.marker_effects) beta.push_back(v);
  for (double v : beta) EXPECT_NEAR(v, 0.0, 1e-3);
  // Likelihood oracle: no point on a coefficient grid around zero does better.
  const double best = ll_at(d, ArmCoding::categorical, 2, beta);
  for (std::size_t j = 0; j < beta.size(); ++j)
    for (double step : {-0.05, -0.01, 0.01, 0.05}) {
      auto b = std::vector<double>(beta.size(), 0.0);
      b[j] = step;
      EXPECT_LE(ll_at(d, ArmCoding::categorical, 2, b), best + 1e-9);
    }
}

TEST(Probit, FailureModes) {
  ProbitData sep;
  for (int i = 0; i < 40; ++i) {
    const double x = -1.0 + i / 20.0;
    sep.add(std::vector<double>{x}, 0, x > 0 ? 1 : 0);
  }
  EXPECT_EQ(code_of([&] { probit_fit(sep, ArmCoding::categorical, 1); }), ErrorCode::non_convergence);
  ProbitData one_class;
  for (int i = 0; i < 10; ++i) one_class.add(std::vector<double>{0.1 * i}, 0, 1);
  EXPECT_EQ(code_of([&] { probit_fit(one_class, ArmCoding::categorical, 1); }), ErrorCode::non_convergence);
  ProbitData collinear;
  for (int i = 0; i < 40; ++i) collinear.add(std::vector<double>{0.8}, i % 2, i % 3 == 0);
  EXPECT_EQ(code_of([&] { probit_fit(collinear, ArmCoding::categorical, 2); }), ErrorCode::degenerate_design);
}

TEST(Probit, WarmStartReachesSameOptimum) {
  Rng rng(8);
  const auto d = random_probit(rng, 400, 3, 2, {0.3, 0.0, -0.3}, {0.5, 0.2});
  const auto cold = probit_fit(d, ArmCoding::categorical, 3);
  const auto warm = probit_fit(d, ArmCoding::categorical, 3, &cold);
  EXPECT_LE(warm.iterations, 1);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(cold.arm_effects[j], warm.arm_effects[j], 1e-8);
}

TEST(Comparators, NullScenarioBalancedAllocation) {
  // Under scenario 6 every comparator should spread patients evenly.
  SimConfig cfg;
  for (auto d : {DesignId::er, DesignId::ar, DesignId::reg}) {
    StudyConfig sc;
    sc.scenario = 6;
    sc.designs = {d};
    sc.replicates = 200;
    sc.seed = 5;
    sc.threads = 1;
    const auto r = run_study(sc);
    const auto* s = r.summary_for(d);
    for (const auto& a : s->anp)
      EXPECT_NEAR(a.mean, 200.0 / 3.0, 3 * a.se + 1e-9) << to_string(d);
  }
}

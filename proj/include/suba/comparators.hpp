#pragma once

// Benchmark designs: equal randomization (ER), outcome-adaptive randomization
// over fixed marker-1 subgroups (AR), and greedy probit-regression
// allocation (Reg).

#include <algorithm>
#include <span>
#include <vector>

#include "suba/error.hpp"
#include "suba/probit.hpp"
#include "suba/rng.hpp"

namespace suba {

inline int er_assign(Rng& rng, int n_arms) {
  require(n_arms >= 1, ErrorCode::invalid_argument, "need at least one arm");
  return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_arms)));
}

struct ARConfig {
  int marker = 0;  // 0-based marker defining the subgroups
  std::vector<double> boundaries{-0.5, 0.5};
  double prior_a = 1.0;
  double prior_b = 1.0;

  void validate() const {
    require(!boundaries.empty(), ErrorCode::invalid_argument, "AR needs at least one boundary");
    for (std::size_t j = 1; j < boundaries.size(); ++j)
      require(boundaries[j] > boundaries[j - 1], ErrorCode::invalid_argument,
              "AR boundaries must be strictly increasing");
    require(prior_a > 0 && prior_b > 0, ErrorCode::invalid_argument, "AR prior must be positive");
  }

  std::size_t n_subgroups() const { return boundaries.size() + 1; }

  // {x < c1}, {c1 <= x < c2}, ..., {c_{J-1} <= x <= c_J}, {x > c_J}.
  std::size_t subgroup_of(std::span<const double> x) const {
    const double v = x[static_cast<std::size_t>(marker)];
    const std::size_t J = boundaries.size();
    if (v > boundaries.back()) return J;
    if (v < boundaries.front()) return 0;
    std::size_t b = 0;
    while (b < J && boundaries[b] <= v) ++b;
    return J == 1 ? 1 : std::min(b, J - 1);
  }
};

// Per (subgroup, arm) enrollment and responder counts.
class ARCounts {
 public:
  ARCounts(const ARConfig& cfg, int n_arms)
      : cfg_(cfg), n_arms_(static_cast<std::size_t>(n_arms)),
        n_(cfg.n_subgroups() * n_arms_, 0), n1_(cfg.n_subgroups() * n_arms_, 0) {
    cfg_.validate();
  }

  void add(std::span<const double> x, int arm, int y) {
    const std::size_t c = cfg_.subgroup_of(x) * n_arms_ + static_cast<std::size_t>(arm);
    n_[c] += 1;
    n1_[c] += y;
  }

  int n(std::size_t b, std::size_t t) const { return n_[b * n_arms_ + t]; }
  int n1(std::size_t b, std::size_t t) const { return n1_[b * n_arms_ + t]; }
  const ARConfig& config() const { return cfg_; }
  std::size_t n_arms() const { return n_arms_; }

  // Posterior mean response per arm within subgroup b.
  std::vector<double> posterior_means(std::size_t b) const {
    std::vector<double> p(n_arms_);
    for (std::size_t t = 0; t < n_arms_; ++t)
      p[t] = (n1(b, t) + cfg_.prior_a) / (n(b, t) + cfg_.prior_a + cfg_.prior_b);
    return p;
  }

  // Randomization probabilities p_tb / sum_s p_sb for a patient with profile x.
  std::vector<double> probabilities(std::span<const double> x) const {
    auto p = posterior_means(cfg_.subgroup_of(x));
    double s = 0.0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
    return p;
  }

 private:
  ARConfig cfg_;
  std::size_t n_arms_;
  std::vector<int> n_, n1_;
};

inline int ar_assign(const ARCounts& counts, std::span<const double> x, Rng& rng) {
  const auto p = counts.probabilities(x);
  return static_cast<int>(sample_weighted(rng, p));
}

// Arm with the highest fitted success probability at x among the active arms,
// ties uniform; uniform over active arms when the fit is unavailable.
inline int reg_assign(const RegFit* fit, std::span<const double> x,
                      const std::vector<bool>& active, Rng& rng) {
  std::vector<int> arms;
  for (std::size_t t = 0; t < active.size(); ++t)
    if (active[t]) arms.push_back(static_cast<int>(t));
  require(!arms.empty(), ErrorCode::invalid_argument, "no active arm");
  if (!fit || !fit->converged) return arms[uniform_index(rng, arms.size())];
  double best = -1.0;
  std::vector<int> ties;
  for (int t : arms) {
    const double p = fit->success_probability(t, x);
    if (p > best) {
      best = p;
      ties.assign(1, t);
    } else if (p == best) {
      ties.push_back(t);
    }
  }
  return ties.size() == 1 ? ties.front() : ties[uniform_index(rng, ties.size())];
}

}  // namespace suba

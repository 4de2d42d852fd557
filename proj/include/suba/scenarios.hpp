#pragma once

// The six simulation truths: biomarker law, per-arm response probability and
// the true-optimal subset of a biomarker profile.

#include <array>
#include <cmath>
#include <span>
#include <string>

#include "suba/error.hpp"
#include "suba/rng.hpp"

namespace suba {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// CDF of N(0, 1.5^2), the link used by every non-constant truth.
inline double truth_link(double z) { return normal_cdf(z / 1.5); }

inline constexpr int scenario_markers = 4;
inline constexpr int scenario_arms = 3;

struct SubsetLabel {
  int index = 0;     // 0-based truth subset
  bool tie = false;  // profile lies on a measure-zero boundary
};

struct ScenarioSpec {
  int id = 2;

  static ScenarioSpec get(int id) {
    require(id >= 1 && id <= 6, ErrorCode::invalid_argument,
            "scenario must be 1..6, got " + std::to_string(id));
    return ScenarioSpec{id};
  }

  int n_markers() const { return scenario_markers; }
  int n_arms() const { return scenario_arms; }

  bool has_subsets() const { return id >= 2 && id <= 5; }
  int n_subsets() const {
    if (id == 3) return 3;
    return has_subsets() ? 2 : 0;
  }

  // Markers i.i.d. uniform on [-1, 1]; scenario 1 pins marker 2 at 0.8 after
  // drawing it so every scenario consumes the same stream.
  void draw_markers(Rng& rng, std::span<double> x) const {
    for (auto& v : x) v = uniform(rng, -1.0, 1.0);
    if (id == 1) x[1] = 0.8;
  }

  double true_response(int arm, std::span<const double> x) const {
    require(arm >= 0 && arm < scenario_arms, ErrorCode::invalid_argument, "arm outside 1..3");
    require(x.size() == static_cast<std::size_t>(scenario_markers), ErrorCode::dimension_mismatch,
            "scenario profiles have 4 markers");
    const double x1 = x[0], x2 = x[1], x3 = x[2];
    switch (id) {
      case 1:
      case 2: {
        const std::array<double, 3> z{x1 + 1.5 * x2, x1, x1 - 1.5 * x2};
        return truth_link(z[static_cast<std::size_t>(arm)]);
      }
      case 3: {
        const std::array<double, 3> z{x1 + 1.5 * x2 - 0.5 * x3 + 2.0 * x1 * x3, -x1 - 2.0 * x3,
                                      x1 - 1.5 * x2 - 2.0 * x1 * x2};
        return truth_link(z[static_cast<std::size_t>(arm)]);
      }
      case 4:
      case 5: {
        if (arm == 2) return id == 4 ? 0.15 : 0.3;
        const double z = arm == 0 ? x1 * x1 / 2 + x1 * x2 / 2 : x2 * x2 / 2 - x1 * x2 / 2;
        return truth_link(z);
      }
      default:
        return 0.4;
    }
  }

  // The truth subset S0_t is the set of profiles for which arm t is optimal
  // under the linear predictors; ties go to the lowest index and are flagged.
  SubsetLabel truth_subset(std::span<const double> x) const {
    require(has_subsets(), ErrorCode::undefined_subset,
            "scenario " + std::to_string(id) + " has no truth subsets");
    require(x.size() == static_cast<std::size_t>(scenario_markers), ErrorCode::dimension_mismatch,
            "scenario profiles have 4 markers");
    const double x1 = x[0], x2 = x[1], x3 = x[2];
    if (id == 2) return {x2 > 0.0 ? 0 : 1, x2 == 0.0};
    if (id == 3) {
      const std::array<double, 3> s{x1 + 1.5 * x2 - 0.5 * x3 + 2.0 * x1 * x3, -x1 - 2.0 * x3,
                                    x1 - 1.5 * x2 - 2.0 * x1 * x2};
      int best = 0;
      bool tie = false;
      for (int t = 1; t < 3; ++t) {
        if (s[static_cast<std::size_t>(t)] > s[static_cast<std::size_t>(best)]) {
          best = t;
          tie = false;
        } else if (s[static_cast<std::size_t>(t)] == s[static_cast<std::size_t>(best)]) {
          tie = true;
        }
      }
      return {best, tie};
    }
    const double s1 = x1 * x1 / 2 + x1 * x2 / 2;
    const double s2 = x2 * x2 / 2 - x1 * x2 / 2;
    return {s2 > s1 ? 1 : 0, s1 == s2};
  }
};

}  // namespace suba

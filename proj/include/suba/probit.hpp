#pragma once

// Probit regression by Newton-Raphson with step halving.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "suba/error.hpp"
#include "suba/scenarios.hpp"

namespace suba {

enum class ArmCoding {
  numeric,      // eta = beta0 * z + beta1'x, z = 1..T
  categorical,  // eta = beta0[z] + beta1'x, one effect per arm
};

inline const char* to_string(ArmCoding c) {
  return c == ArmCoding::numeric ? "numeric" : "categorical";
}

struct ProbitData {
  std::vector<std::vector<double>> x;
  std::vector<int> arm;  // 0-based
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  void add(std::span<const double> xi, int a, int yi) {
    x.emplace_back(xi.begin(), xi.end());
    arm.push_back(a);
    y.push_back(yi);
  }
};

struct RegFit {
  ArmCoding coding = ArmCoding::categorical;
  int n_arms = 0;
  std::vector<double> arm_effects;     // size 1 (numeric) or T (categorical)
  std::vector<double> marker_effects;  // size K
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  double gradient_norm = 0.0;  // sup-norm at the returned coefficients

  double linear_predictor(int arm, std::span<const double> x) const {
    double eta = coding == ArmCoding::numeric ? arm_effects[0] * (arm + 1)
                                              : arm_effects[static_cast<std::size_t>(arm)];
    for (std::size_t k = 0; k < marker_effects.size(); ++k) eta += marker_effects[k] * x[k];
    return eta;
  }

  double success_probability(int arm, std::span<const double> x) const {
    return normal_cdf(linear_predictor(arm, x));
  }
};

namespace probit {

// log Phi(u), accurate far into the lower tail.
inline double log_cdf(double u) {
  if (u > -30.0) return std::log(normal_cdf(u));
  const double u2 = u * u;
  return -0.5 * u2 - std::log(-u) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / u2 + 3.0 / (u2 * u2));
}

// phi(u) / Phi(u).
inline double mills(double u) {
  if (u > -30.0) {
    const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
    return pdf / normal_cdf(u);
  }
  const double u2 = u * u;
  return -u / (1.0 - 1.0 / u2 + 3.0 / (u2 * u2));
}

inline std::size_t n_params(ArmCoding coding, int n_arms, std::size_t n_markers) {
  return (coding == ArmCoding::numeric ? 1 : static_cast<std::size_t>(n_arms)) + n_markers;
}

inline Eigen::MatrixXd design_matrix(const ProbitData& data, ArmCoding coding, int n_arms) {
  const std::size_t K = data.size() ? data.x.front().size() : 0;
  const std::size_t offset = coding == ArmCoding::numeric ? 1 : static_cast<std::size_t>(n_arms);
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.size()),
                                            static_cast<Eigen::Index>(offset + K));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (coding == ArmCoding::numeric)
      X(r, 0) = data.arm[i] + 1;
    else
      X(r, data.arm[i]) = 1.0;
    for (std::size_t k = 0; k < K; ++k) X(r, static_cast<Eigen::Index>(offset + k)) = data.x[i][k];
  }
  return X;
}

inline double log_likelihood(const Eigen::MatrixXd& X, const std::vector<int>& y,
                             const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += y[static_cast<std::size_t>(i)] ? log_cdf(eta(i)) : log_cdf(-eta(i));
  return ll;
}

inline Eigen::VectorXd gradient(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd score(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    score(i) = y[static_cast<std::size_t>(i)] ? mills(eta(i)) : -mills(-eta(i));
  return X.transpose() * score;
}

// Negative Hessian: sum_i w_i x_i x_i' with w_i > 0.
inline Eigen::MatrixXd information(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                   const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd w(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (y[static_cast<std::size_t>(i)]) {
      const double m = mills(eta(i));
      w(i) = m * (m + eta(i));
    } else {
      const double m = mills(-eta(i));
      w(i) = m * (m - eta(i));
    }
  }
  return X.transpose() * w.asDiagonal() * X;
}

}  // namespace probit

struct ProbitOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  double divergence_norm = 1e3;
};

// Maximum likelihood probit fit. Throws non_convergence when the data lack one
// outcome class, the likelihood is unbounded (separation) or the iteration
// budget is exhausted, and degenerate_design when the information matrix is
// singular.
inline RegFit probit_fit(const ProbitData& data, ArmCoding coding, int n_arms,
                         const RegFit* warm_start = nullptr, ProbitOptions opt = {}) {
  require(n_arms >= 1, ErrorCode::invalid_argument, "need at least one arm");
  int ones = 0;
  for (int v : data.y) ones += v;
  require(ones > 0 && ones < static_cast<int>(data.size()), ErrorCode::non_convergence,
          "probit fit needs both outcome classes");
  const Eigen::MatrixXd X = probit::design_matrix(data, coding, n_arms);
  const auto p = X.cols();
  require(X.rows() >= p, ErrorCode::degenerate_design, "fewer observations than coefficients");

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  if (warm_start && warm_start->converged && warm_start->coding == coding &&
      static_cast<Eigen::Index>(warm_start->arm_effects.size() + warm_start->marker_effects.size()) == p) {
    Eigen::Index j = 0;
    for (double v : warm_start->arm_effects) beta(j++) = v;
    for (double v : warm_start->marker_effects) beta(j++) = v;
  }

  RegFit fit;
  fit.coding = coding;
  fit.n_arms = n_arms;
  double ll = probit::log_likelihood(X, data.y, beta);
  Eigen::VectorXd g = probit::gradient(X, data.y, beta);
  int it = 0;
  for (; it < opt.max_iterations && g.lpNorm<Eigen::Infinity>() >= opt.tolerance; ++it) {
    const Eigen::MatrixXd info = probit::information(X, data.y, beta);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    require(ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff()),
            ErrorCode::degenerate_design, "probit information matrix is singular");
    const Eigen::VectorXd step = ldlt.solve(g);
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    double next_ll = probit::log_likelihood(X, data.y, next);
    // Near the optimum the gain falls below the resolution of ll itself, so
    // a step that loses no more than rounding noise is still accepted.
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    for (int h = 0; h < 40 && !(next_ll >= ll - slack); ++h) {
      scale *= 0.5;
      next = beta + scale * step;
      next_ll = probit::log_likelihood(X, data.y, next);
    }
    if (!(next_ll >= ll - slack)) break;  // no ascent possible at machine precision
    beta = next;
    ll = next_ll;
    require(beta.norm() <= opt.divergence_norm, ErrorCode::non_convergence,
            "probit coefficients diverge (separated data)");
    g = probit::gradient(X, data.y, beta);
  }
  fit.iterations = it;
  fit.log_likelihood = ll;
  fit.gradient_norm = g.lpNorm<Eigen::Infinity>();
  fit.converged = fit.gradient_norm < opt.tolerance;
  // Under complete separation the gradient vanishes as the likelihood tends
  // to one, so a near-perfect fit is reported as divergence.
  require(ll < -1e-6, ErrorCode::non_convergence, "probit likelihood unbounded (separated data)");
  require(fit.converged, ErrorCode::non_convergence, "probit fit did not converge");
  const Eigen::Index offset = coding == ArmCoding::numeric ? 1 : n_arms;
  fit.arm_effects.assign(beta.data(), beta.data() + offset);
  fit.marker_effects.assign(beta.data() + offset, beta.data() + p);
  return fit;
}

}  // namespace suba

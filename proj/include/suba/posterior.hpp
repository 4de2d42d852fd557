#pragma once

// Exact posterior over the partition catalog under independent Beta priors on
// every (leaf, arm) response rate, with posterior predictive response
// probabilities and the least-squares partition summary.
//
// Thresholds and counts depend only on the path from the root to a node, so
// they are computed once per path and shared by every layout containing it.

#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "suba/error.hpp"
#include "suba/partition.hpp"

namespace suba {

struct BetaHyper {
  double a = 1.0;
  double b = 1.0;

  void validate() const {
    require(a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b),
            ErrorCode::invalid_argument, "Beta hyperparameters must be positive");
  }
};

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Enrolled patients: biomarkers for all, arm once assigned, outcome once seen.
struct TrialData {
  static constexpr int unassigned = -1;
  static constexpr int pending = -1;

  MarkerMatrix markers;
  std::vector<int> arms;
  std::vector<int> outcomes;

  TrialData() = default;
  explicit TrialData(std::size_t n_markers) : markers(n_markers) {}

  std::size_t size() const { return arms.size(); }
  std::size_t n_markers() const { return markers.n_markers(); }

  std::size_t add(std::span<const double> x, int arm = unassigned, int outcome = pending) {
    markers.push_back(x);
    arms.push_back(arm);
    outcomes.push_back(outcome);
    return arms.size() - 1;
  }

  bool observed(std::size_t i) const { return arms[i] >= 0 && outcomes[i] >= 0; }

  std::size_t n_observed() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < size(); ++i) c += observed(i) ? 1 : 0;
    return c;
  }
};

struct LeafCounts {
  std::size_t n_leaves = 0;
  std::size_t n_arms = 0;
  std::vector<int> responders;      // [m * n_arms + t]
  std::vector<int> non_responders;  // [m * n_arms + t]

  LeafCounts() = default;
  LeafCounts(std::size_t leaves, std::size_t arms)
      : n_leaves(leaves), n_arms(arms), responders(leaves * arms, 0), non_responders(leaves * arms, 0) {}

  int n1(std::size_t m, std::size_t t) const { return responders[m * n_arms + t]; }
  int n0(std::size_t m, std::size_t t) const { return non_responders[m * n_arms + t]; }
  int n(std::size_t m, std::size_t t) const { return n1(m, t) + n0(m, t); }
  int n(std::size_t m) const {
    int s = 0;
    for (std::size_t t = 0; t < n_arms; ++t) s += n(m, t);
    return s;
  }
  int total() const {
    int s = 0;
    for (std::size_t m = 0; m < n_leaves; ++m) s += n(m);
    return s;
  }
};

// Sum over (leaf, arm) cells of log B(a + n1, b + n0) - log B(a, b).
inline double log_marginal_likelihood(const LeafCounts& counts, const BetaHyper& hyper) {
  const double base = log_beta(hyper.a, hyper.b);
  double s = 0.0;
  for (std::size_t c = 0; c < counts.responders.size(); ++c) {
    const int n1 = counts.responders[c];
    const int n0 = counts.non_responders[c];
    if (n1 == 0 && n0 == 0) continue;
    s += log_beta(hyper.a + n1, hyper.b + n0) - base;
  }
  return s;
}

inline LeafCounts count_leaves(const ThresholdedPartition& partition, const TrialData& data,
                               std::size_t n_arms) {
  LeafCounts c(partition.leaf_count(), n_arms);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.observed(i)) continue;
    const auto m = partition.leaf_of(data.markers.row(i));
    const auto t = static_cast<std::size_t>(data.arms[i]);
    (data.outcomes[i] ? c.responders : c.non_responders)[m * n_arms + t] += 1;
  }
  return c;
}

enum class LsCriterion {
  squared_distance_to_mean,  // || G - Ghat ||^2
  mean_squared_distance,     // E || G - G' ||^2 under the posterior
};

struct PartitionSummary {
  std::size_t layout_index = 0;
  ThresholdedPartition partition;
  LeafCounts counts;
  std::vector<double> leaf_means;  // [leaf * n_arms + arm]
  std::vector<int> best_arm;       // per leaf, -1 when no eligible arm
  double loss = 0.0;
  std::size_t n_patients = 0;
  std::vector<double> cocluster;  // n x n, row-major
};

class PosteriorState {
 public:
  std::shared_ptr<const PartitionCatalog> catalog;
  BetaHyper hyper;
  std::size_t n_arms = 0;
  std::uint64_t snapshot = 0;
  std::size_t n_patients = 0;
  std::size_t n_observed = 0;

  // Per path: thresholds for every marker (paths above the depth cap only),
  // responder / non-responder counts per arm, leaf log-likelihood and the
  // posterior probability that the path is a leaf.
  std::vector<double> thresholds;
  std::vector<int> path_n1;
  std::vector<int> path_n0;
  std::vector<double> path_loglik;
  std::vector<double> leaf_mass;

  // log sum_r prior(r) * likelihood(r) with the catalog's normalized priors.
  double log_evidence = 0.0;

  const PathSpace& paths() const { return catalog->paths; }
  std::size_t n_markers() const { return static_cast<std::size_t>(catalog->n_markers); }

  double threshold(std::size_t path, std::size_t marker) const {
    return thresholds[path * n_markers() + marker];
  }

  // Normalized log posterior of catalog layout r.
  double log_weight(std::size_t r) const {
    double lw = catalog->log_priors[r] - log_evidence;
    for (auto leaf : catalog->leaves_of(r)) lw += path_loglik[leaf];
    return lw;
  }
  double weight(std::size_t r) const { return std::exp(log_weight(r)); }

  std::vector<double> log_weights() const {
    std::vector<double> out(catalog->size());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = log_weight(r);
    return out;
  }

  double leaf_mean(std::size_t path, std::size_t arm) const {
    const auto c = path * n_arms + arm;
    return (hyper.a + path_n1[c]) / (hyper.a + hyper.b + path_n1[c] + path_n0[c]);
  }

  // q(t, x) for every arm in the universe.
  std::vector<double> predictive(std::span<const double> x) const {
    std::vector<double> q(n_arms, 0.0);
    predictive_into(x, q);
    return q;
  }

  double predictive_q(std::span<const double> x, std::size_t arm) const {
    require(arm < n_arms, ErrorCode::invalid_argument, "arm outside the arm universe");
    return predictive(x)[arm];
  }

  void predictive_into(std::span<const double> x, std::span<double> q) const {
    require(x.size() == n_markers(), ErrorCode::dimension_mismatch,
            "biomarker vector has " + std::to_string(x.size()) + " components, expected " +
                std::to_string(n_markers()));
    std::fill(q.begin(), q.end(), 0.0);
    accumulate(0, x, q);
  }

  // Path ids of every node that contains x, root first.
  std::vector<int> paths_containing(std::span<const double> x) const {
    std::vector<int> out;
    collect(0, x, out);
    return out;
  }

  ThresholdedPartition partition(std::size_t r) const {
    const auto& layout = catalog->layouts[r];
    const auto node_path = catalog->node_paths(r);
    ThresholdedPartition tp{layout, std::vector<double>(layout.size(), 0.0),
                            static_cast<int>(n_markers())};
    for (std::size_t i = 0; i < layout.size(); ++i)
      if (!layout.is_leaf(i))
        tp.thresholds[i] = threshold(static_cast<std::size_t>(node_path[i]),
                                     static_cast<std::size_t>(layout.marker(i) - 1));
    return tp;
  }

  LeafCounts counts(std::size_t r) const {
    const auto leaves = catalog->leaves_of(r);
    LeafCounts c(leaves.size(), n_arms);
    for (std::size_t m = 0; m < leaves.size(); ++m)
      for (std::size_t t = 0; t < n_arms; ++t) {
        c.responders[m * n_arms + t] = path_n1[leaves[m] * n_arms + t];
        c.non_responders[m * n_arms + t] = path_n0[leaves[m] * n_arms + t];
      }
    return c;
  }

 private:
  void accumulate(std::size_t p, std::span<const double> x, std::span<double> q) const {
    const double mass = leaf_mass[p];
    if (mass > 0.0)
      for (std::size_t t = 0; t < n_arms; ++t) q[t] += mass * leaf_mean(p, t);
    if (paths().depth(p) >= paths().max_rounds()) return;
    for (int k = 0; k < static_cast<int>(n_markers()); ++k) {
      const bool up = x[static_cast<std::size_t>(k)] >= threshold(p, static_cast<std::size_t>(k));
      accumulate(static_cast<std::size_t>(paths().child(p, k, up)), x, q);
    }
  }

  void collect(std::size_t p, std::span<const double> x, std::vector<int>& out) const {
    out.push_back(static_cast<int>(p));
    if (paths().depth(p) >= paths().max_rounds()) return;
    for (int k = 0; k < static_cast<int>(n_markers()); ++k) {
      const bool up = x[static_cast<std::size_t>(k)] >= threshold(p, static_cast<std::size_t>(k));
      collect(static_cast<std::size_t>(paths().child(p, k, up)), x, out);
    }
  }
};

// Either route gives the same posterior; automatic picks the path recursion
// whenever the catalog carries its generating prior.
enum class PosteriorMethod { automatic, enumerate };

inline constexpr int max_dp_markers = 6;

namespace detail {

struct PathBuilder {
  const PathSpace& paths;
  const TrialData& data;
  std::size_t n_arms;
  const std::vector<double>* frozen;
  PosteriorState& out;

  // Scratch per depth level; a level's buffers are only reused after its
  // children have returned.
  struct Level {
    std::vector<double> col;
    std::vector<std::size_t> lower, upper;
  };
  std::vector<Level> levels = std::vector<Level>(static_cast<std::size_t>(paths.max_rounds()) + 1);

  void visit(std::size_t p, const std::vector<std::size_t>& rows) {
    for (auto i : rows) {
      if (!data.observed(i)) continue;
      const auto c = p * n_arms + static_cast<std::size_t>(data.arms[i]);
      (data.outcomes[i] ? out.path_n1 : out.path_n0)[c] += 1;
    }
    const int depth = paths.depth(p);
    if (depth >= paths.max_rounds()) return;
    const auto K = static_cast<std::size_t>(paths.n_markers());
    Level& lv = levels[static_cast<std::size_t>(depth)];
    for (std::size_t k = 0; k < K; ++k) {
      double thr;
      if (frozen) {
        thr = (*frozen)[p * K + k];
      } else {
        lv.col.clear();
        for (auto i : rows) lv.col.push_back(data.markers(i, k));
        thr = median_in_place(lv.col);
      }
      out.thresholds[p * K + k] = thr;
      lv.lower.clear();
      lv.upper.clear();
      for (auto i : rows) (data.markers(i, k) >= thr ? lv.upper : lv.lower).push_back(i);
      const int m = static_cast<int>(k);
      visit(static_cast<std::size_t>(paths.child(p, m, false)), lv.lower);
      visit(static_cast<std::size_t>(paths.child(p, m, true)), lv.upper);
    }
  }
};

// Posterior leaf probability of every path by summing over all layouts.
// Returns the log evidence.
inline double leaf_mass_by_layouts(const PartitionCatalog& catalog,
                                   const std::vector<double>& path_loglik,
                                   std::vector<double>& leaf_mass) {
  const std::size_t R = catalog.size();
  std::vector<double> lw(R);
  double max_lw = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < R; ++r) {
    double v = catalog.log_priors[r];
    for (auto leaf : catalog.leaves_of(r)) v += path_loglik[leaf];
    lw[r] = v;
    max_lw = std::max(max_lw, v);
  }
  double total = 0.0;
  for (double& v : lw) total += v = std::exp(v - max_lw);
  std::fill(leaf_mass.begin(), leaf_mass.end(), 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const double w = lw[r] / total;
    for (auto leaf : catalog.leaves_of(r)) leaf_mass[leaf] += w;
  }
  return max_lw + std::log(total);
}

// Same quantities by inside/outside recursion over paths, tracking the set of
// markers used so the phi^(distinct markers) factor stays exact. Values are
// scaled by each path's own leaf likelihood to stay in range.
inline double leaf_mass_by_paths(const PartitionCatalog& catalog,
                                 const std::vector<double>& path_loglik,
                                 std::vector<double>& leaf_mass) {
  const PriorParams& prior = *catalog.prior;
  const PathSpace& paths = catalog.paths;
  const int K = catalog.n_markers;
  const int D = catalog.max_rounds;
  const std::size_t S = std::size_t{1} << K;
  const std::size_t P = paths.size();

  std::vector<double> phi_pow(S);
  for (std::size_t u = 0; u < S; ++u)
    phi_pow[u] = std::pow(prior.phi, std::popcount(static_cast<unsigned>(u)));
  auto stop_prob = [&](std::size_t p) { return paths.depth(p) < D ? prior.split_probs[0] : 1.0; };
  auto split_factor = [&](std::size_t p, int k, std::size_t lo, std::size_t up) {
    return prior.split_probs[static_cast<std::size_t>(k) + 1] *
           std::exp(path_loglik[lo] + path_loglik[up] - path_loglik[p]);
  };

  std::vector<double> in(P * S, 0.0);
  for (std::size_t p = P; p-- > 0;) {
    double* ip = &in[p * S];
    ip[0] = stop_prob(p);
    if (paths.depth(p) >= D) continue;
    for (int k = 0; k < K; ++k) {
      const auto lo = static_cast<std::size_t>(paths.child(p, k, false));
      const auto up = static_cast<std::size_t>(paths.child(p, k, true));
      const double c = split_factor(p, k, lo, up);
      if (c == 0.0) continue;
      const std::size_t bit = std::size_t{1} << k;
      for (std::size_t u1 = 0; u1 < S; ++u1) {
        const double a = in[lo * S + u1];
        if (a == 0.0) continue;
        for (std::size_t u2 = 0; u2 < S; ++u2) {
          const double b = in[up * S + u2];
          if (b != 0.0) ip[u1 | u2 | bit] += c * a * b;
        }
      }
    }
  }
  double z = 0.0;
  for (std::size_t u = 0; u < S; ++u) z += phi_pow[u] * in[u];

  std::vector<double> out(P * S, 0.0);
  out[0] = 1.0;
  for (std::size_t p = 0; p < P; ++p) {
    if (paths.depth(p) >= D) continue;
    const double* op = &out[p * S];
    for (int k = 0; k < K; ++k) {
      const auto lo = static_cast<std::size_t>(paths.child(p, k, false));
      const auto up = static_cast<std::size_t>(paths.child(p, k, true));
      const double c = split_factor(p, k, lo, up);
      if (c == 0.0) continue;
      const std::size_t bit = std::size_t{1} << k;
      for (std::size_t u0 = 0; u0 < S; ++u0) {
        const double o = op[u0] * c;
        if (o == 0.0) continue;
        for (std::size_t u = 0; u < S; ++u) {
          const std::size_t merged = u0 | u | bit;
          out[lo * S + merged] += o * in[up * S + u];
          out[up * S + merged] += o * in[lo * S + u];
        }
      }
    }
  }
  for (std::size_t p = 0; p < P; ++p) {
    double acc = 0.0;
    for (std::size_t u = 0; u < S; ++u) acc += phi_pow[u] * out[p * S + u];
    leaf_mass[p] = stop_prob(p) * acc / z;
  }
  return path_loglik[0] + std::log(z) - catalog.log_prior_normalizer;
}

inline PosteriorState build_posterior(std::shared_ptr<const PartitionCatalog> catalog,
                                      const TrialData& data, const BetaHyper& hyper,
                                      std::size_t n_arms, std::uint64_t snapshot,
                                      const std::vector<double>* frozen, PosteriorMethod method) {
  require(catalog != nullptr, ErrorCode::invalid_argument, "null catalog");
  require(catalog->log_priors.size() == catalog->size(), ErrorCode::invalid_argument,
          "catalog priors are not normalized");
  require(n_arms >= 1, ErrorCode::invalid_argument, "need at least one arm");
  hyper.validate();
  const auto K = static_cast<std::size_t>(catalog->n_markers);
  require(data.size() == 0 || data.n_markers() == K, ErrorCode::dimension_mismatch,
          "trial data marker count does not match the catalog");
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.observed(i))
      require(static_cast<std::size_t>(data.arms[i]) < n_arms && data.outcomes[i] <= 1,
              ErrorCode::invalid_argument, "observation outside arm universe or not binary");

  PosteriorState s;
  s.catalog = catalog;
  s.hyper = hyper;
  s.n_arms = n_arms;
  s.snapshot = snapshot;
  s.n_patients = data.size();
  s.n_observed = data.n_observed();

  const PathSpace& paths = catalog->paths;
  const std::size_t P = paths.size();
  s.thresholds.assign(P * K, 0.0);
  s.path_n1.assign(P * n_arms, 0);
  s.path_n0.assign(P * n_arms, 0);

  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  PathBuilder{paths, data, n_arms, frozen, s}.visit(0, rows);

  const double base = log_beta(hyper.a, hyper.b);
  s.path_loglik.assign(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    double ll = 0.0;
    for (std::size_t t = 0; t < n_arms; ++t) {
      const int n1 = s.path_n1[p * n_arms + t];
      const int n0 = s.path_n0[p * n_arms + t];
      if (n1 || n0) ll += log_beta(hyper.a + n1, hyper.b + n0) - base;
    }
    s.path_loglik[p] = ll;
  }

  s.leaf_mass.assign(P, 0.0);
  const bool use_dp = method != PosteriorMethod::enumerate && catalog->prior.has_value() &&
                      K <= max_dp_markers;
  s.log_evidence = use_dp ? leaf_mass_by_paths(*catalog, s.path_loglik, s.leaf_mass)
                          : leaf_mass_by_layouts(*catalog, s.path_loglik, s.leaf_mass);
  return s;
}

}  // namespace detail

// Re-binds every layout to the current data, recounts, and renormalizes.
inline PosteriorState rebuild_posterior(std::shared_ptr<const PartitionCatalog> catalog,
                                        const TrialData& data, const BetaHyper& hyper,
                                        std::size_t n_arms, std::uint64_t snapshot = 0,
                                        PosteriorMethod method = PosteriorMethod::automatic) {
  return detail::build_posterior(std::move(catalog), data, hyper, n_arms, snapshot, nullptr,
                                 method);
}

// Test hook: recount with the thresholds of a previous state held fixed.
inline PosteriorState rebuild_posterior_frozen(const PosteriorState& previous,
                                               const TrialData& data,
                                               std::uint64_t snapshot = 0) {
  return detail::build_posterior(previous.catalog, data, previous.hyper, previous.n_arms,
                                 snapshot, &previous.thresholds, PosteriorMethod::automatic);
}

namespace detail {

// Patients routed into each path, for all n enrolled patients.
inline std::vector<std::vector<std::size_t>> path_members(const PosteriorState& s,
                                                          const TrialData& data) {
  std::vector<std::vector<std::size_t>> members(s.paths().size());
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int p : s.paths_containing(data.markers.row(i)))
      members[static_cast<std::size_t>(p)].push_back(i);
  return members;
}

}  // namespace detail

// Posterior mean co-clustering matrix over all enrolled patients.
inline std::vector<double> co_clustering(const PosteriorState& s, const TrialData& data) {
  require(data.size() >= 1, ErrorCode::no_data, "co-clustering needs at least one patient");
  require(data.size() == s.n_patients, ErrorCode::stale_posterior,
          "posterior was built from a different data snapshot");
  const std::size_t n = data.size();
  std::vector<double> g(n * n, 0.0);
  const auto members = detail::path_members(s, data);
  for (std::size_t p = 0; p < members.size(); ++p) {
    const double w = s.leaf_mass[p];
    if (w == 0.0) continue;
    for (auto i : members[p])
      for (auto j : members[p]) g[i * n + j] += w;
  }
  // Every patient shares a leaf with itself under every layout.
  for (std::size_t i = 0; i < n; ++i) g[i * n + i] = 1.0;
  return g;
}

// Least-squares partition: the catalog layout whose co-clustering matrix is
// closest to the posterior mean. active (optional) restricts the per-leaf
// recommended arm.
inline PartitionSummary least_squares_partition(
    const PosteriorState& s, const TrialData& data,
    LsCriterion criterion = LsCriterion::squared_distance_to_mean,
    const std::vector<bool>* active = nullptr) {
  const auto g = co_clustering(s, data);
  const std::size_t n = data.size();
  const auto members = detail::path_members(s, data);

  // For a layout r, sum_ij G^r_ij = sum_leaves |P|^2 and
  // sum_ij G^r_ij Ghat_ij = sum_leaves sum_{i,j in P} Ghat_ij.
  std::vector<double> leaf_cost(members.size(), 0.0);
  for (std::size_t p = 0; p < members.size(); ++p) {
    double inner = 0.0;
    for (auto i : members[p])
      for (auto j : members[p]) inner += g[i * n + j];
    const double sz = static_cast<double>(members[p].size());
    leaf_cost[p] = sz * sz - 2.0 * inner;
  }
  double constant = 0.0;
  for (double v : g) constant += criterion == LsCriterion::squared_distance_to_mean ? v * v : v;

  std::size_t best = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < s.catalog->size(); ++r) {
    double loss = 0.0;
    for (auto leaf : s.catalog->leaves_of(r)) loss += leaf_cost[leaf];
    // Layouts with identical co-clustering can differ in the last bits from
    // summation order; treat those as ties and keep the lower index.
    if (r == 0 || loss < best_loss - 1e-9 * std::max(1.0, std::abs(best_loss))) {
      best_loss = loss;
      best = r;
    }
  }

  PartitionSummary out;
  out.layout_index = best;
  out.partition = s.partition(best);
  out.counts = s.counts(best);
  out.loss = std::max(0.0, best_loss + constant);
  out.n_patients = n;
  out.cocluster = g;
  const auto leaves = s.catalog->leaves_of(best);
  out.leaf_means.resize(leaves.size() * s.n_arms);
  out.best_arm.assign(leaves.size(), -1);
  for (std::size_t m = 0; m < leaves.size(); ++m) {
    double top = -1.0;
    for (std::size_t t = 0; t < s.n_arms; ++t) {
      const double mean = s.leaf_mean(leaves[m], t);
      out.leaf_means[m * s.n_arms + t] = mean;
      if (active && !(*active)[t]) continue;
      if (mean > top) {
        top = mean;
        out.best_arm[m] = static_cast<int>(t);
      }
    }
  }
  return out;
}

}  // namespace suba

#pragma once

// Random small fixtures scored against the brute-force evaluator.

#include <cmath>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "suba/posterior.hpp"
#include "suba/rng.hpp"

namespace oracle {

struct Fixture {
  int K = 1, D = 1, T = 1;
  int a = 1, b = 1;
  Q phi{1, 2};
  std::vector<Patient> data;
  std::vector<std::vector<double>> queries;
};

// Values come from a coarse lattice so ties and repeated medians occur.
inline Fixture random_fixture(suba::Rng& rng, int K, int D, int T, int n) {
  Fixture f;
  f.K = K;
  f.D = D;
  f.T = T;
  f.a = 1 + static_cast<int>(suba::uniform_index(rng, 2));
  f.b = 1 + static_cast<int>(suba::uniform_index(rng, 3));
  f.phi = Q(1 + static_cast<int>(suba::uniform_index(rng, 10)), 10);
  auto lattice = [&] { return -1.0 + 0.25 * static_cast<double>(suba::uniform_index(rng, 9)); };
  for (int i = 0; i < n; ++i) {
    Patient p;
    for (int k = 0; k < K; ++k) p.x.push_back(lattice());
    const double r = suba::uniform01(rng);
    if (r < 0.1) {
      p.arm = -1;
    } else {
      p.arm = static_cast<int>(suba::uniform_index(rng, static_cast<std::size_t>(T)));
      p.outcome = suba::uniform01(rng) < 0.2 ? -1 : static_cast<int>(suba::uniform_index(rng, 2));
    }
    f.data.push_back(p);
  }
  for (const auto& p : f.data) f.queries.push_back(p.x);
  for (int j = 0; j < 6; ++j) {
    std::vector<double> x;
    for (int k = 0; k < K; ++k) x.push_back(j % 2 ? lattice() : suba::uniform(rng, -1.2, 1.2));
    f.queries.push_back(x);
  }
  return f;
}

struct Discrepancy {
  double weight = 0.0;
  double q = 0.0;
  double max() const { return std::max(weight, q); }
};

inline Discrepancy compare(const Fixture& f, suba::PosteriorMethod method) {
  const double phi = to_double(f.phi);
  auto prior = suba::PriorParams::uniform(f.K, phi, f.D);
  auto catalog = std::make_shared<const suba::PartitionCatalog>(suba::make_catalog(prior));
  suba::TrialData data(static_cast<std::size_t>(f.K));
  for (const auto& p : f.data) data.add(p.x, p.arm, p.arm < 0 ? -1 : p.outcome);
  const auto post = suba::rebuild_posterior(catalog, data, {double(f.a), double(f.b)},
                                            static_cast<std::size_t>(f.T), 0, method);
  const auto ref = evaluate(f.K, f.D, f.T, f.a, f.b, f.phi, f.data, f.queries);

  Discrepancy d;
  if (ref.weight.size() != catalog->size()) return {1.0, 1.0};
  for (std::size_t r = 0; r < catalog->size(); ++r) {
    const auto it = ref.weight.find(catalog->layouts[r].to_string());
    if (it == ref.weight.end()) return {1.0, 1.0};
    d.weight = std::max(d.weight, std::abs(post.weight(r) - to_double(it->second)));
  }
  for (std::size_t j = 0; j < f.queries.size(); ++j) {
    const auto q = post.predictive(f.queries[j]);
    for (int t = 0; t < f.T; ++t)
      d.q = std::max(d.q, std::abs(q[static_cast<std::size_t>(t)] -
                                   to_double(ref.q[j][static_cast<std::size_t>(t)])));
  }
  return d;
}

// Every (K <= 2, depth <= 2, T <= 2, n <= 6) combination with several random
// draws each. Returns the worst discrepancy over both posterior routes.
struct SweepOutcome {
  Discrepancy worst;
  int fixtures = 0;
};

inline SweepOutcome sweep(std::uint64_t seed, int draws_per_cell) {
  SweepOutcome out;
  suba::Rng rng(seed);
  for (int K = 1; K <= 2; ++K)
    for (int D = 1; D <= 2; ++D)
      for (int T = 1; T <= 2; ++T)
        for (int n = 0; n <= 6; ++n)
          for (int rep = 0; rep < draws_per_cell; ++rep) {
            const auto f = random_fixture(rng, K, D, T, n);
            for (auto m : {suba::PosteriorMethod::automatic, suba::PosteriorMethod::enumerate}) {
              const auto d = compare(f, m);
              out.worst.weight = std::max(out.worst.weight, d.weight);
              out.worst.q = std::max(out.worst.q, d.q);
            }
            ++out.fixtures;
          }
  return out;
}

}  // namespace oracle

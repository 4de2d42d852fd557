#pragma once

// Tree partitions of the biomarker space: layout enumeration, prior weights,
// data-dependent median thresholds and point routing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "suba/error.hpp"

namespace suba {

// Row-major n x K matrix of biomarker values.
class MarkerMatrix {
 public:
  MarkerMatrix() = default;
  explicit MarkerMatrix(std::size_t n_markers) : n_markers_(n_markers) {}
  MarkerMatrix(std::size_t n_markers, std::vector<double> values)
      : n_markers_(n_markers), values_(std::move(values)) {
    require(n_markers_ > 0 && values_.size() % n_markers_ == 0,
            ErrorCode::dimension_mismatch, "marker matrix size is not a multiple of K");
  }

  std::size_t n_markers() const { return n_markers_; }
  std::size_t rows() const { return n_markers_ == 0 ? 0 : values_.size() / n_markers_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * n_markers_, n_markers_};
  }
  double operator()(std::size_t i, std::size_t k) const { return values_[i * n_markers_ + k]; }

  void push_back(std::span<const double> x) {
    require(x.size() == n_markers_, ErrorCode::dimension_mismatch,
            "biomarker vector has " + std::to_string(x.size()) + " components, expected " +
                std::to_string(n_markers_));
    values_.insert(values_.end(), x.begin(), x.end());
  }

  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t n_markers_ = 0;
  std::vector<double> values_;
};

// Median with the midpoint convention for even counts; 0 for an empty set.
// Reorders v.
inline double median_in_place(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline double median_of(std::vector<double> v) { return median_in_place(v); }

struct PriorParams {
  // split_probs[0] = stop, split_probs[k] = split on marker k (1-based).
  std::vector<double> split_probs;
  double phi = 0.5;
  int max_rounds = 3;

  int n_markers() const { return static_cast<int>(split_probs.size()) - 1; }

  static PriorParams uniform(int n_markers, double phi = 0.5, int max_rounds = 3) {
    PriorParams p;
    p.split_probs.assign(static_cast<std::size_t>(n_markers) + 1, 1.0 / (n_markers + 1));
    p.phi = phi;
    p.max_rounds = max_rounds;
    return p;
  }

  void validate() const {
    require(split_probs.size() >= 2, ErrorCode::invalid_argument,
            "split_probs needs at least K+1 = 2 entries");
    double sum = 0.0;
    for (double v : split_probs) {
      require(v >= 0.0 && std::isfinite(v), ErrorCode::invalid_argument,
              "split probabilities must be finite and non-negative");
      sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-12, ErrorCode::invalid_argument,
            "split probabilities must sum to 1");
    require(phi > 0.0 && phi <= 1.0, ErrorCode::invalid_argument, "phi must lie in (0, 1]");
    require(max_rounds >= 1, ErrorCode::invalid_argument, "max_rounds must be >= 1");
  }
};

// Binary split tree stored as a preorder token list: 0 is a leaf, k >= 1 is an
// internal node splitting on marker k, followed by its lower then upper subtree.
class PartitionLayout {
 public:
  PartitionLayout() : PartitionLayout(std::vector<int>{0}) {}

  explicit PartitionLayout(std::vector<int> tokens) : tokens_(std::move(tokens)) {
    upper_.assign(tokens_.size(), -1);
    std::size_t pos = 0;
    int depth = 0;
    index(pos, 0, depth);
    require(pos == tokens_.size(), ErrorCode::parse_error, "trailing tokens in layout");
    depth_ = depth;
  }

  const std::vector<int>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool is_leaf(std::size_t i) const { return tokens_[i] == 0; }
  int marker(std::size_t i) const { return tokens_[i]; }
  std::size_t lower_child(std::size_t i) const { return i + 1; }
  std::size_t upper_child(std::size_t i) const { return static_cast<std::size_t>(upper_[i]); }
  int depth() const { return depth_; }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count(tokens_.begin(), tokens_.end(), 0));
  }

  // Distinct marker indices used by the splits.
  int distinct_markers() const {
    std::vector<int> m;
    for (int t : tokens_)
      if (t != 0) m.push_back(t);
    std::sort(m.begin(), m.end());
    return static_cast<int>(std::unique(m.begin(), m.end()) - m.begin());
  }

  // Canonical serialization: comma-separated preorder, "." for leaves.
  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (i) s += ',';
      s += tokens_[i] == 0 ? std::string(".") : std::to_string(tokens_[i]);
    }
    return s;
  }

  static PartitionLayout parse(const std::string& text) {
    std::vector<int> tokens;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok == ".") {
        tokens.push_back(0);
      } else {
        try {
          std::size_t used = 0;
          int k = std::stoi(tok, &used);
          require(used == tok.size() && k >= 1, ErrorCode::parse_error, "bad layout token");
          tokens.push_back(k);
        } catch (const std::logic_error&) {
          fail(ErrorCode::parse_error, "bad layout token '" + tok + "'");
        }
      }
    }
    require(!tokens.empty(), ErrorCode::parse_error, "empty layout");
    return PartitionLayout(std::move(tokens));
  }

  friend bool operator==(const PartitionLayout& a, const PartitionLayout& b) {
    return a.tokens_ == b.tokens_;
  }
  friend bool operator<(const PartitionLayout& a, const PartitionLayout& b) {
    return a.tokens_ < b.tokens_;
  }

 private:
  void index(std::size_t& pos, int depth, int& max_depth) {
    require(pos < tokens_.size(), ErrorCode::parse_error, "truncated layout");
    require(tokens_[pos] >= 0, ErrorCode::parse_error, "negative layout token");
    max_depth = std::max(max_depth, depth);
    const std::size_t here = pos++;
    if (tokens_[here] == 0) return;
    index(pos, depth + 1, max_depth);
    upper_[here] = static_cast<int>(pos);
    index(pos, depth + 1, max_depth);
  }

  std::vector<int> tokens_;
  std::vector<int> upper_;
  int depth_ = 0;
};

inline bool layout_valid_for(const PartitionLayout& layout, int n_markers, int max_rounds) {
  if (layout.depth() > max_rounds) return false;
  for (int t : layout.tokens())
    if (t > n_markers) return false;
  return true;
}

// Unnormalized log prior: each node above the depth cap contributes log v of
// its choice, plus (distinct markers) * log(phi).
inline double log_prior(const PartitionLayout& layout, const PriorParams& params) {
  require(layout_valid_for(layout, params.n_markers(), params.max_rounds),
          ErrorCode::invalid_argument, "layout not valid for prior parameters");
  double lp = 0.0;
  struct Frame {
    std::size_t node;
    int depth;
  };
  std::vector<Frame> stack{{0, 0}};
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    if (depth >= params.max_rounds) continue;
    const int choice = layout.marker(node);
    lp += std::log(params.split_probs[static_cast<std::size_t>(choice)]);
    if (choice != 0) {
      stack.push_back({layout.upper_child(node), depth + 1});
      stack.push_back({layout.lower_child(node), depth + 1});
    }
  }
  return lp + layout.distinct_markers() * std::log(params.phi);
}

// Identifies every node position reachable by a sequence of
// (marker, lower/upper) decisions from the root, up to the depth cap.
class PathSpace {
 public:
  PathSpace() = default;
  PathSpace(int n_markers, int max_rounds) : n_markers_(n_markers), max_rounds_(max_rounds) {
    depth_.push_back(0);
    parent_.push_back(-1);
    std::size_t level_begin = 0;
    for (int d = 0; d < max_rounds; ++d) {
      const std::size_t level_end = depth_.size();
      for (std::size_t p = level_begin; p < level_end; ++p) {
        for (int k = 0; k < n_markers; ++k) {
          for (int dir = 0; dir < 2; ++dir) {
            depth_.push_back(d + 1);
            parent_.push_back(static_cast<int>(p));
          }
        }
      }
      level_begin = level_end;
    }
    children_.assign(depth_.size() * fanout(), -1);
    std::size_t next = 1;
    for (std::size_t p = 0; p < depth_.size() && next < depth_.size(); ++p) {
      if (depth_[p] >= max_rounds) continue;
      for (std::size_t c = 0; c < fanout(); ++c) children_[p * fanout() + c] = static_cast<int>(next++);
    }
  }

  int n_markers() const { return n_markers_; }
  int max_rounds() const { return max_rounds_; }
  std::size_t size() const { return depth_.size(); }
  int depth(std::size_t p) const { return depth_[p]; }
  int parent(std::size_t p) const { return parent_[p]; }
  std::size_t fanout() const { return static_cast<std::size_t>(2 * n_markers_); }

  // marker is 0-based; upper selects the x >= threshold side.
  int child(std::size_t p, int marker, bool upper) const {
    return children_[p * fanout() + static_cast<std::size_t>(2 * marker + (upper ? 1 : 0))];
  }

 private:
  int n_markers_ = 0;
  int max_rounds_ = 0;
  std::vector<int> depth_;
  std::vector<int> parent_;
  std::vector<int> children_;
};

// Number of layouts with the given remaining depth budget; saturates at cap+1.
inline std::uint64_t count_layouts(int n_markers, int max_rounds, std::uint64_t cap) {
  std::uint64_t t = 1;  // T(depth + 1)
  for (int r = max_rounds; r >= 1; --r) {
    const long double next = 1.0L + static_cast<long double>(n_markers) * t * t;
    t = next > static_cast<long double>(cap) ? cap + 1 : static_cast<std::uint64_t>(next);
  }
  return t;
}

inline constexpr std::uint64_t default_layout_cap = 10'000'000;

struct PartitionCatalog {
  int n_markers = 0;
  int max_rounds = 0;
  std::vector<PartitionLayout> layouts;
  std::vector<double> log_priors;  // empty until normalized
  // Set by normalize_catalog: the generating prior and log of the sum of the
  // unnormalized prior weights. Imported catalogs may carry neither.
  std::optional<PriorParams> prior;
  double log_prior_normalizer = 0.0;

  // Leaf path ids per layout (preorder), flattened with offsets; built by
  // enumerate_layouts / compile().
  PathSpace paths;
  std::vector<std::uint32_t> leaf_offsets;
  std::vector<std::uint16_t> leaf_paths;

  std::size_t size() const { return layouts.size(); }

  std::span<const std::uint16_t> leaves_of(std::size_t r) const {
    return {leaf_paths.data() + leaf_offsets[r], leaf_offsets[r + 1] - leaf_offsets[r]};
  }

  // Path id of every preorder node of layout r.
  std::vector<int> node_paths(std::size_t r) const {
    const auto& layout = layouts[r];
    std::vector<int> out(layout.size(), -1);
    walk_paths(layout, 0, 0, out);
    return out;
  }

  void compile() {
    paths = PathSpace(n_markers, max_rounds);
    require(paths.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::resource_limit,
            "path space too large");
    leaf_offsets.assign(1, 0);
    leaf_paths.clear();
    for (const auto& layout : layouts) {
      require(layout_valid_for(layout, n_markers, max_rounds), ErrorCode::invalid_argument,
              "layout " + layout.to_string() + " not valid for catalog");
      auto node_path = std::vector<int>(layout.size(), -1);
      walk_paths(layout, 0, 0, node_path);
      for (std::size_t i = 0; i < layout.size(); ++i)
        if (layout.is_leaf(i)) leaf_paths.push_back(static_cast<std::uint16_t>(node_path[i]));
      leaf_offsets.push_back(static_cast<std::uint32_t>(leaf_paths.size()));
    }
  }

 private:
  void walk_paths(const PartitionLayout& layout, std::size_t node, int path,
                  std::vector<int>& out) const {
    out[node] = path;
    if (layout.is_leaf(node)) return;
    const int m = layout.marker(node) - 1;
    walk_paths(layout, layout.lower_child(node), paths.child(static_cast<std::size_t>(path), m, false), out);
    walk_paths(layout, layout.upper_child(node), paths.child(static_cast<std::size_t>(path), m, true), out);
  }
};

namespace detail {

inline void append_subtrees(int n_markers, int rounds_left,
                            std::vector<std::vector<int>>& out) {
  out.push_back({0});
  if (rounds_left == 0) return;
  std::vector<std::vector<int>> sub;
  append_subtrees(n_markers, rounds_left - 1, sub);
  for (int k = 1; k <= n_markers; ++k) {
    for (const auto& lower : sub) {
      for (const auto& upper : sub) {
        std::vector<int> t;
        t.reserve(1 + lower.size() + upper.size());
        t.push_back(k);
        t.insert(t.end(), lower.begin(), lower.end());
        t.insert(t.end(), upper.begin(), upper.end());
        out.push_back(std::move(t));
      }
    }
  }
}

}  // namespace detail

// All layouts reachable by max_rounds rounds of "stop or split on marker k",
// in canonical (lexicographic preorder) order. Priors are left empty.
inline PartitionCatalog enumerate_layouts(int n_markers, int max_rounds,
                                          std::uint64_t cap = default_layout_cap) {
  require(n_markers >= 1, ErrorCode::invalid_argument, "need at least one marker");
  require(max_rounds >= 1, ErrorCode::invalid_argument, "max_rounds must be >= 1");
  const std::uint64_t count = count_layouts(n_markers, max_rounds, cap);
  require(count <= cap, ErrorCode::resource_limit,
          "partition catalog for K=" + std::to_string(n_markers) + ", depth=" +
              std::to_string(max_rounds) + " exceeds the layout cap of " + std::to_string(cap));
  std::vector<std::vector<int>> trees;
  trees.reserve(static_cast<std::size_t>(count));
  detail::append_subtrees(n_markers, max_rounds, trees);

  PartitionCatalog cat;
  cat.n_markers = n_markers;
  cat.max_rounds = max_rounds;
  cat.layouts.reserve(trees.size());
  for (auto& t : trees) cat.layouts.emplace_back(std::move(t));
  cat.compile();
  return cat;
}

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline PartitionCatalog& normalize_catalog(PartitionCatalog& catalog, const PriorParams& params) {
  params.validate();
  require(params.n_markers() == catalog.n_markers && params.max_rounds == catalog.max_rounds,
          ErrorCode::invalid_argument, "prior parameters do not match the catalog");
  catalog.log_priors.resize(catalog.size());
  for (std::size_t r = 0; r < catalog.size(); ++r)
    catalog.log_priors[r] = log_prior(catalog.layouts[r], params);
  const double z = log_sum_exp(catalog.log_priors);
  for (double& lp : catalog.log_priors) lp -= z;
  catalog.prior = params;
  catalog.log_prior_normalizer = z;
  return catalog;
}

inline PartitionCatalog make_catalog(const PriorParams& params,
                                     std::uint64_t cap = default_layout_cap) {
  params.validate();
  auto cat = enumerate_layouts(params.n_markers(), params.max_rounds, cap);
  normalize_catalog(cat, params);
  return cat;
}

// A layout bound to concrete cut values. thresholds is aligned with the
// layout's preorder tokens (entries at leaves are unused).
struct ThresholdedPartition {
  PartitionLayout layout;
  std::vector<double> thresholds;
  int n_markers = 0;

  std::size_t leaf_count() const { return layout.leaf_count(); }

  // 0-based preorder index of the leaf containing x. Ties (x_k equal to the
  // threshold) go to the upper child.
  std::size_t leaf_of(std::span<const double> x) const {
    require(static_cast<int>(x.size()) == n_markers, ErrorCode::dimension_mismatch,
            "biomarker vector has " + std::to_string(x.size()) + " components, expected " +
                std::to_string(n_markers));
    std::size_t node = 0;
    std::size_t leaf = 0;
    while (!layout.is_leaf(node)) {
      const auto k = static_cast<std::size_t>(layout.marker(node) - 1);
      if (x[k] >= thresholds[node]) {
        const std::size_t up = layout.upper_child(node);
        leaf += leaves_between(node + 1, up);
        node = up;
      } else {
        node = layout.lower_child(node);
      }
    }
    return leaf;
  }

 private:
  std::size_t leaves_between(std::size_t begin, std::size_t end) const {
    std::size_t c = 0;
    for (std::size_t i = begin; i < end; ++i) c += layout.is_leaf(i) ? 1 : 0;
    return c;
  }
};

namespace detail {

inline void bind_node(const PartitionLayout& layout, std::size_t node, const MarkerMatrix& data,
                      const std::vector<std::size_t>& rows, std::vector<double>& thresholds) {
  if (layout.is_leaf(node)) return;
  const auto k = static_cast<std::size_t>(layout.marker(node) - 1);
  std::vector<double> col;
  col.reserve(rows.size());
  for (auto i : rows) col.push_back(data(i, k));
  const double thr = median_of(std::move(col));
  thresholds[node] = thr;
  std::vector<std::size_t> lower, upper;
  for (auto i : rows) (data(i, k) >= thr ? upper : lower).push_back(i);
  bind_node(layout, layout.lower_child(node), data, lower, thresholds);
  bind_node(layout, layout.upper_child(node), data, upper, thresholds);
}

}  // namespace detail

// Recursive conditional medians: each split's threshold is the median of its
// marker over the rows routed into that node.
inline ThresholdedPartition bind_thresholds(const PartitionLayout& layout, const MarkerMatrix& data,
                                            int n_markers) {
  require(data.rows() == 0 || static_cast<int>(data.n_markers()) == n_markers,
          ErrorCode::dimension_mismatch, "data has wrong number of markers");
  for (int t : layout.tokens())
    require(t <= n_markers, ErrorCode::invalid_argument, "layout uses a marker beyond K");
  ThresholdedPartition tp{layout, std::vector<double>(layout.size(), 0.0), n_markers};
  std::vector<std::size_t> rows(data.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  detail::bind_node(layout, 0, data, rows, tp.thresholds);
  return tp;
}

}  // namespace suba

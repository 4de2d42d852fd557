#pragma once

// Plain-text formats: catalog export/import, reference-point lists,
// posterior dumps and the co-clustering matrix.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "suba/error.hpp"
#include "suba/partition.hpp"
#include "suba/posterior.hpp"

namespace suba {

inline constexpr const char* catalog_magic = "# suba-catalog v1";

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), ErrorCode::parse_error, "bad number for " + what + ": '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorCode::parse_error, "bad number for " + what + ": '" + s + "'");
  }
}

inline int parse_int(const std::string& s, const std::string& what) {
  const double v = parse_double(s, what);
  require(v == static_cast<int>(v), ErrorCode::parse_error, what + " must be an integer");
  return static_cast<int>(v);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Header lines, then one "<layout> <normalized log prior>" line per layout in
// catalog order. Values use 17 significant digits so a round trip is exact.
inline void write_catalog(std::ostream& os, const PartitionCatalog& cat) {
  require(cat.log_priors.size() == cat.size(), ErrorCode::invalid_argument,
          "catalog has no prior weights to export");
  os << catalog_magic << '\n';
  os << "markers " << cat.n_markers << '\n';
  os << "max_rounds " << cat.max_rounds << '\n';
  if (cat.prior) {
    os << "phi " << detail::fmt17(cat.prior->phi) << '\n';
    os << "split_probs";
    for (double v : cat.prior->split_probs) os << ' ' << detail::fmt17(v);
    os << '\n';
  }
  os << "layouts " << cat.size() << '\n';
  for (std::size_t r = 0; r < cat.size(); ++r)
    os << cat.layouts[r].to_string() << ' ' << detail::fmt17(cat.log_priors[r]) << '\n';
}

// Reads a catalog written by write_catalog. Weights are renormalized; a
// catalog without the generating prior uses the per-layout posterior route.
inline PartitionCatalog read_catalog(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && detail::trim(line) == catalog_magic,
          ErrorCode::parse_error, "missing '# suba-catalog v1' header");
  PartitionCatalog cat;
  PriorParams prior;
  bool have_phi = false, have_probs = false;
  std::size_t expected = 0;
  bool in_layouts = false;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    const std::string where = "line " + std::to_string(line_no);
    if (!in_layouts) {
      std::string value;
      if (key == "markers") {
        ls >> value;
        cat.n_markers = detail::parse_int(value, "markers");
      } else if (key == "max_rounds") {
        ls >> value;
        cat.max_rounds = detail::parse_int(value, "max_rounds");
      } else if (key == "phi") {
        ls >> value;
        prior.phi = detail::parse_double(value, "phi");
        have_phi = true;
      } else if (key == "split_probs") {
        while (ls >> value) prior.split_probs.push_back(detail::parse_double(value, "split_probs"));
        have_probs = true;
      } else if (key == "layouts") {
        ls >> value;
        expected = static_cast<std::size_t>(detail::parse_int(value, "layouts"));
        in_layouts = true;
      } else {
        fail(ErrorCode::parse_error, where + ": unknown key '" + key + "'");
      }
      continue;
    }
    std::string lp;
    require(static_cast<bool>(ls >> lp), ErrorCode::parse_error, where + ": missing log prior");
    cat.layouts.push_back(PartitionLayout::parse(key));
    cat.log_priors.push_back(detail::parse_double(lp, "log prior"));
  }
  require(cat.n_markers >= 1 && cat.max_rounds >= 1, ErrorCode::parse_error,
          "catalog header lacks markers / max_rounds");
  require(in_layouts && cat.layouts.size() == expected, ErrorCode::parse_error,
          "catalog declares " + std::to_string(expected) + " layouts but lists " +
              std::to_string(cat.layouts.size()));
  require(!cat.layouts.empty(), ErrorCode::parse_error, "catalog has no layouts");
  for (std::size_t r = 1; r < cat.layouts.size(); ++r)
    require(cat.layouts[r - 1] < cat.layouts[r], ErrorCode::parse_error,
            "catalog layouts must be unique and in canonical order");
  cat.compile();
  const double z = log_sum_exp(cat.log_priors);
  require(std::isfinite(z), ErrorCode::parse_error, "catalog prior weights are not finite");
  for (double& v : cat.log_priors) v -= z;
  if (have_phi && have_probs) {
    prior.max_rounds = cat.max_rounds;
    prior.validate();
    require(prior.n_markers() == cat.n_markers, ErrorCode::parse_error,
            "split_probs length does not match markers");
    // Keep the prior only if the file really is the full catalog of it, so
    // the path recursion applies.
    if (count_layouts(cat.n_markers, cat.max_rounds, default_layout_cap) == cat.size()) {
      PartitionCatalog full = make_catalog(prior);
      bool same = full.layouts == cat.layouts;
      for (std::size_t r = 0; same && r < cat.size(); ++r)
        same = std::abs(full.log_priors[r] - cat.log_priors[r]) <= 1e-12;
      if (same) {
        cat.prior = prior;
        cat.log_prior_normalizer = full.log_prior_normalizer;
      }
    }
  }
  return cat;
}

inline void save_catalog(const std::string& path, const PartitionCatalog& cat) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::invalid_argument, "cannot write " + path);
  write_catalog(os, cat);
}

inline PartitionCatalog load_catalog(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::invalid_argument, "cannot read " + path);
  return read_catalog(is);
}

// One biomarker vector per line, comma or whitespace separated; '#' starts a
// comment line.
inline std::vector<std::vector<double>> read_reference_points(std::istream& is, int n_markers) {
  std::vector<std::vector<double>> pts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> x;
    for (const auto& f : detail::split_fields(line))
      x.push_back(detail::parse_double(f, "reference point on line " + std::to_string(line_no)));
    require(static_cast<int>(x.size()) == n_markers, ErrorCode::dimension_mismatch,
            "reference point on line " + std::to_string(line_no) + " has " +
                std::to_string(x.size()) + " values, expected " + std::to_string(n_markers));
    pts.push_back(std::move(x));
  }
  require(!pts.empty(), ErrorCode::parse_error, "reference-point file has no points");
  return pts;
}

inline std::vector<std::vector<double>> load_reference_points(const std::string& path, int n_markers) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::invalid_argument, "cannot read " + path);
  return read_reference_points(is, n_markers);
}

// Layout weights in decreasing order (top entries only when limit > 0).
inline void write_posterior(std::ostream& os, const PosteriorState& s, std::size_t limit = 0) {
  const auto lw = s.log_weights();
  std::vector<std::size_t> order(lw.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lw[a] > lw[b]; });
  if (limit && limit < order.size()) order.resize(limit);
  os << "# suba-posterior v1\n";
  os << "patients " << s.n_patients << '\n';
  os << "observed " << s.n_observed << '\n';
  os << "arms " << s.n_arms << '\n';
  os << "log_evidence " << detail::fmt17(s.log_evidence) << '\n';
  os << "layouts " << order.size() << '\n';
  for (auto r : order) {
    const auto tp = s.partition(r);
    os << s.catalog->layouts[r].to_string() << ' ' << detail::fmt17(lw[r]) << ' '
       << detail::fmt17(std::exp(lw[r]));
    for (std::size_t i = 0; i < tp.thresholds.size(); ++i)
      if (!tp.layout.is_leaf(i)) os << ' ' << detail::fmt17(tp.thresholds[i]);
    os << '\n';
  }
}

// n x n matrix, one CSV row per patient.
inline void write_matrix_csv(std::ostream& os, const std::vector<double>& m, std::size_t n) {
  require(m.size() == n * n, ErrorCode::dimension_mismatch, "matrix is not n x n");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) os << ',';
      os << detail::fmt17(m[i * n + j]);
    }
    os << '\n';
  }
}

}  // namespace suba

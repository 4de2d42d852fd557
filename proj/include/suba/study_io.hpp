#pragma once

// Study outputs (per-replicate CSV, aggregate JSON, ORR-difference CSV), the
// JSON study configuration and the text report.

#include <json.hpp>

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "suba/io.hpp"
#include "suba/simulator.hpp"

namespace suba {

inline constexpr const char* study_schema = "suba-study/1";
inline constexpr const char* sweep_schema = "suba-sweep/1";

inline nlohmann::json to_json(const MeanSe& m) { return {{"mean", m.mean}, {"se", m.se}, {"n", m.n}}; }

inline nlohmann::json config_json(const StudyConfig& c) {
  nlohmann::json designs = nlohmann::json::array();
  for (auto d : c.designs) designs.push_back(to_string(d));
  return {
      {"scenario", c.scenario},
      {"designs", designs},
      {"replicates", c.replicates},
      {"seed", c.seed},
      {"N", c.sim.max_patients},
      {"runin", c.sim.n_runin},
      {"phi", c.sim.phi},
      {"grid", c.sim.grid_points},
      {"max_rounds", c.sim.max_rounds},
      {"a", c.sim.hyper.a},
      {"b", c.sim.hyper.b},
      {"allocation", to_string(c.sim.allocation)},
      {"power_c", c.sim.power_c},
      {"reference_points", c.sim.reference_points.size()},
      {"ar_marker", c.sim.ar.marker + 1},
      {"ar_boundaries", c.sim.ar.boundaries},
      {"reg_coding", to_string(c.sim.reg_coding)},
  };
}

// Applies the keys of a JSON config object. Unknown keys are an error so
// typos do not silently fall back to defaults. Returns the "out" and
// "reference_points" paths when present.
struct ConfigExtras {
  std::string out;
  std::string reference_points;
  std::string axis;
};

inline ConfigExtras apply_config(const nlohmann::json& j, StudyConfig& c) {
  require(j.is_object(), ErrorCode::parse_error, "config must be a JSON object");
  ConfigExtras extra;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "scenario") c.scenario = v.get<int>();
      else if (k == "design" || k == "designs") {
        c.designs.clear();
        if (v.is_string()) {
          if (v.get<std::string>() == "all")
            c.designs.assign(std::begin(all_designs), std::end(all_designs));
          else
            c.designs.push_back(parse_design(v.get<std::string>()));
        } else {
          for (const auto& d : v) c.designs.push_back(parse_design(d.get<std::string>()));
        }
      }
      else if (k == "replicates") c.replicates = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "N") c.sim.max_patients = v.get<int>();
      else if (k == "runin") c.sim.n_runin = v.get<int>();
      else if (k == "phi") c.sim.phi = v.get<double>();
      else if (k == "grid") c.sim.grid_points = v.get<int>();
      else if (k == "max_rounds") c.sim.max_rounds = v.get<int>();
      else if (k == "a") c.sim.hyper.a = v.get<double>();
      else if (k == "b") c.sim.hyper.b = v.get<double>();
      else if (k == "threads") c.threads = v.get<unsigned>();
      else if (k == "allocation") {
        const auto s = v.get<std::string>();
        require(s == "argmax" || s == "power_randomization", ErrorCode::parse_error,
                "allocation must be argmax or power_randomization");
        c.sim.allocation = s == "argmax" ? AllocationMode::argmax : AllocationMode::power_randomization;
      }
      else if (k == "power_c") c.sim.power_c = v.get<double>();
      else if (k == "ar_marker") c.sim.ar.marker = v.get<int>() - 1;
      else if (k == "ar_boundaries") c.sim.ar.boundaries = v.get<std::vector<double>>();
      else if (k == "reg_coding") {
        const auto s = v.get<std::string>();
        require(s == "numeric" || s == "categorical", ErrorCode::parse_error,
                "reg_coding must be numeric or categorical");
        c.sim.reg_coding = s == "numeric" ? ArmCoding::numeric : ArmCoding::categorical;
      }
      else if (k == "out") extra.out = v.get<std::string>();
      else if (k == "reference_points") extra.reference_points = v.get<std::string>();
      else if (k == "axis") extra.axis = v.get<std::string>();
      else fail(ErrorCode::parse_error, "unknown config key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("config: ") + e.what());
  }
  return extra;
}

inline nlohmann::json summary_json(const DesignSummary& s) {
  nlohmann::json anp = nlohmann::json::array();
  for (const auto& m : s.anp) anp.push_back(to_json(m));
  nlohmann::json subsets = nlohmann::json::array();
  for (const auto& row : s.anp_subset) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& m : row) r.push_back(to_json(m));
    subsets.push_back(r);
  }
  return {{"design", to_string(s.design)},
          {"anp", anp},
          {"anp_subset", subsets},
          {"orr", to_json(s.orr)},
          {"stop_size", to_json(s.stop_size)},
          {"drop_fraction", s.drop_fraction}};
}

// Aggregates: SUBA stop size ("stopping"), ANP by
// design and subset ("designs"), ORR comparisons and end-of-trial q summaries.
inline nlohmann::json study_json(const StudyResult& r) {
  nlohmann::json j;
  j["schema"] = study_schema;
  j["config"] = config_json(r.config);
  if (const auto* s = r.summary_for(DesignId::suba))
    j["stopping"] = {{"mean_stop_size", s->stop_size.mean}, {"se", s->stop_size.se}};
  j["designs"] = nlohmann::json::object();
  j["orr"] = nlohmann::json::object();
  for (const auto& s : r.summaries) {
    j["designs"][to_string(s.design)] = summary_json(s);
    j["orr"][to_string(s.design)] = to_json(s.orr);
  }
  j["comparisons"] = nlohmann::json::array();
  for (const auto& c : r.comparisons)
    j["comparisons"].push_back({{"other", to_string(c.other)},
                                {"mean_diff", to_json(c.mean_diff)},
                                {"mean_abs_diff", c.mean_abs_diff},
                                {"fraction_suba_better", c.fraction_suba_better}});
  if (r.fraction_q1_over_q2)
    j["final_q"] = {{"fraction_q1_over_q2", *r.fraction_q1_over_q2},
                    {"fraction_q1_over_q3", *r.fraction_q1_over_q3}};
  return j;
}

inline nlohmann::json sweep_json(const std::vector<SweepPoint>& pts, SweepAxis axis) {
  nlohmann::json j;
  j["schema"] = sweep_schema;
  j["axis"] = to_string(axis);
  j["points"] = nlohmann::json::array();
  for (const auto& p : pts) j["points"].push_back({{"value", p.value}, {"study", study_json(p.result)}});
  return j;
}

namespace detail {

inline std::string csv_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

// One row per (design, replicate).
inline void write_replicates_csv(std::ostream& os, const StudyResult& r) {
  const auto sc = ScenarioSpec::get(r.config.scenario);
  const int T = sc.n_arms();
  os << "design,replicate,orr";
  for (int t = 1; t <= T; ++t) os << ",np" << t;
  for (int b = 1; b <= sc.n_subsets(); ++b)
    for (int t = 1; t <= T; ++t) os << ",s" << b << "_np" << t;
  os << ",stop_size,drops";
  for (int t = 1; t <= T; ++t) os << ",q" << t;
  os << '\n';
  for (std::size_t j = 0; j < r.config.designs.size(); ++j) {
    for (const auto& rec : r.records[j]) {
      os << to_string(rec.design) << ',' << rec.replicate << ','
         << (rec.orr_value ? detail::csv_num(*rec.orr_value) : std::string());
      for (int v : rec.np) os << ',' << v;
      for (const auto& row : rec.np_subset)
        for (int v : row) os << ',' << v;
      os << ',' << rec.stop_size << ',';
      for (std::size_t d = 0; d < rec.drops.size(); ++d)
        os << (d ? ";" : "") << rec.drops[d].arm + 1 << '@' << rec.drops[d].enrolled;
      for (int t = 0; t < T; ++t) {
        os << ',';
        if (!rec.final_q.empty()) os << detail::csv_num(rec.final_q[static_cast<std::size_t>(t)]);
      }
      os << '\n';
    }
  }
}

// Plot-ready paired differences ORR(SUBA) - ORR(other), one row per replicate.
inline void write_orr_diff_csv(std::ostream& os, const StudyResult& r) {
  const auto* suba = r.records_for(DesignId::suba);
  require(suba != nullptr, ErrorCode::invalid_argument, "ORR differences need the SUBA design");
  std::vector<const std::vector<TrialRecord>*> others;
  os << "replicate";
  for (std::size_t j = 0; j < r.config.designs.size(); ++j) {
    if (r.config.designs[j] == DesignId::suba) continue;
    others.push_back(&r.records[j]);
    os << ",suba_minus_" << to_string(r.config.designs[j]);
  }
  os << '\n';
  for (std::size_t rep = 0; rep < suba->size(); ++rep) {
    os << rep;
    for (const auto* o : others) {
      os << ',';
      const auto& a = (*suba)[rep];
      const auto& b = (*o)[rep];
      if (a.orr_value && b.orr_value) os << detail::csv_num(*a.orr_value - *b.orr_value);
    }
    os << '\n';
  }
}

namespace detail {

inline std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void report_study(std::ostream& os, const nlohmann::json& j, const std::string& indent) {
  const auto& cfg = j.at("config");
  os << indent << "scenario " << cfg.at("scenario").get<int>() << ", " << cfg.at("replicates").get<int>()
     << " replicates, N=" << cfg.at("N").get<int>() << ", run-in " << cfg.at("runin").get<int>()
     << ", phi=" << cfg.at("phi").get<double>() << ", seed " << cfg.at("seed").get<std::uint64_t>() << '\n';
  if (j.contains("stopping"))
    os << indent << "SUBA mean stop size: " << fixed(j["stopping"]["mean_stop_size"].get<double>())
       << " (se " << fixed(j["stopping"]["se"].get<double>()) << ")\n";
  os << indent << "ANP after run-in:\n";
  for (const auto& [name, s] : j.at("designs").items()) {
    os << indent << "  " << name << ":";
    for (const auto& m : s.at("anp")) os << ' ' << fixed(m.at("mean").get<double>());
    const auto& subsets = s.at("anp_subset");
    for (std::size_t b = 0; b < subsets.size(); ++b) {
      os << "  | S" << b + 1 << ':';
      for (const auto& m : subsets[b]) os << ' ' << fixed(m.at("mean").get<double>());
    }
    os << "  | ORR " << fixed(s.at("orr").at("mean").get<double>(), 3) << '\n';
  }
  for (const auto& c : j.at("comparisons"))
    os << indent << "SUBA vs " << c.at("other").get<std::string>() << ": mean ORR diff "
       << fixed(c.at("mean_diff").at("mean").get<double>(), 4) << ", SUBA higher in "
       << fixed(100.0 * c.at("fraction_suba_better").get<double>(), 1) << "% of replicates\n";
  if (j.contains("final_q"))
    os << indent << "final q(1) > q(2) in " << fixed(100.0 * j["final_q"]["fraction_q1_over_q2"].get<double>(), 1)
       << "%, q(1) > q(3) in " << fixed(100.0 * j["final_q"]["fraction_q1_over_q3"].get<double>(), 1)
       << "% of replicates\n";
}

}  // namespace detail

// Human-readable summary of a study or sweep JSON document.
inline void write_report(std::ostream& os, const nlohmann::json& j) {
  try {
    const auto schema = j.at("schema").get<std::string>();
    if (schema == study_schema) {
      detail::report_study(os, j, "");
    } else if (schema == sweep_schema) {
      os << "sweep over " << j.at("axis").get<std::string>() << '\n';
      for (const auto& p : j.at("points")) {
        os << "- " << j.at("axis").get<std::string>() << " = " << p.at("value").get<double>() << '\n';
        detail::report_study(os, p.at("study"), "  ");
      }
    } else {
      fail(ErrorCode::parse_error, "unknown report schema '" + schema + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse_error, std::string("report input: ") + e.what());
  }
}

}  // namespace suba

// Command-line front end: simulation studies, sweeps, reports, catalog and
// posterior export, and the trial-conduct HTTP server.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

// Eigen goes in before httplib.h, whose <resolv.h> defines a _res macro.
#include "suba/study_io.hpp"
#include "suba/http_api.hpp"
#include "suba/io.hpp"
#include "suba/service.hpp"

namespace fs = std::filesystem;
using namespace suba;

namespace {

struct StudyFlags {
  int scenario = 2;
  std::vector<std::string> designs{"all"};
  std::size_t replicates = 200;
  std::uint64_t seed = 20240601;
  int N = 300;
  int runin = 100;
  double phi = 0.5;
  int grid = 10;
  unsigned threads = 0;
  std::string out = "suba_out";
  std::string config;
  std::string reference_points;
  std::string reg_coding = "categorical";
  std::string axis = "N";
};

void add_study_flags(CLI::App* cmd, StudyFlags& f) {
  cmd->add_option("--scenario", f.scenario, "Simulation truth, 1..6")->check(CLI::Range(1, 6));
  cmd->add_option("--design", f.designs, "SUBA, ER, AR, Reg or all (repeatable)");
  cmd->add_option("--replicates", f.replicates, "Number of simulated trials");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--N", f.N, "Maximum sample size");
  cmd->add_option("--runin", f.runin, "Run-in size");
  cmd->add_option("--phi", f.phi, "Marker-parsimony prior parameter");
  cmd->add_option("--grid", f.grid, "Exclusion grid points per marker");
  cmd->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
  cmd->add_option("--reference-points", f.reference_points, "File of biomarker vectors replacing the grid");
  cmd->add_option("--reg-coding", f.reg_coding, "Reg arm coding: categorical or numeric");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--config", f.config, "JSON config; its keys override flags");
}

StudyConfig build_config(StudyFlags& f) {
  StudyConfig c;
  c.scenario = f.scenario;
  c.designs.clear();
  for (const auto& d : f.designs) {
    if (d == "all")
      c.designs.assign(std::begin(all_designs), std::end(all_designs));
    else
      c.designs.push_back(parse_design(d));
  }
  c.replicates = f.replicates;
  c.seed = f.seed;
  c.sim.max_patients = f.N;
  c.sim.n_runin = f.runin;
  c.sim.phi = f.phi;
  c.sim.grid_points = f.grid;
  c.threads = f.threads;
  require(f.reg_coding == "categorical" || f.reg_coding == "numeric", ErrorCode::invalid_argument,
          "--reg-coding must be categorical or numeric");
  c.sim.reg_coding = f.reg_coding == "numeric" ? ArmCoding::numeric : ArmCoding::categorical;
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    require(static_cast<bool>(is), ErrorCode::invalid_argument, "cannot read " + f.config);
    Json j;
    try {
      j = Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse_error, f.config + ": " + e.what());
    }
    const auto extra = apply_config(j, c);
    if (!extra.out.empty()) f.out = extra.out;
    if (!extra.reference_points.empty()) f.reference_points = extra.reference_points;
    if (!extra.axis.empty()) f.axis = extra.axis;
  }
  if (!f.reference_points.empty())
    c.sim.reference_points = load_reference_points(f.reference_points, scenario_markers);
  c.validate();
  return c;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::invalid_argument, "cannot write " + path.string());
  body(os);
}

void write_study_outputs(const fs::path& dir, const std::string& stem, const StudyResult& r) {
  write_file(dir / (stem + "replicates.csv"), [&](std::ostream& os) { write_replicates_csv(os, r); });
  if (r.records_for(DesignId::suba) && r.config.designs.size() > 1)
    write_file(dir / (stem + "orr_diff.csv"), [&](std::ostream& os) { write_orr_diff_csv(os, r); });
}

int run_study_cmd(StudyFlags& f) {
  const auto cfg = build_config(f);
  const auto r = run_study(cfg);
  fs::create_directories(f.out);
  write_study_outputs(f.out, "", r);
  const auto j = study_json(r);
  write_file(fs::path(f.out) / "study.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  write_report(std::cout, j);
  return 0;
}

int run_sweep_cmd(StudyFlags& f) {
  const auto cfg = build_config(f);
  const auto axis = parse_axis(f.axis);
  const auto pts = sensitivity_sweep(cfg, axis);
  fs::create_directories(f.out);
  for (const auto& p : pts) {
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%g_", to_string(axis), p.value);
    write_study_outputs(f.out, stem, p.result);
    if (const auto* suba = p.result.records_for(DesignId::suba)) {
      write_file(fs::path(f.out) / (std::string(stem) + "q_diff.csv"), [&](std::ostream& os) {
        os << "replicate,q1_minus_q2,q1_minus_q3\n";
        for (const auto& rec : *suba)
          os << rec.replicate << ',' << rec.final_q[0] - rec.final_q[1] << ',' << rec.final_q[0] - rec.final_q[2]
             << '\n';
      });
    }
  }
  const auto j = sweep_json(pts, axis);
  write_file(fs::path(f.out) / "sweep.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  write_report(std::cout, j);
  return 0;
}

int run_report_cmd(const std::vector<std::string>& inputs) {
  for (const auto& in : inputs) {
    std::ifstream is(in);
    require(static_cast<bool>(is), ErrorCode::invalid_argument, "cannot read " + in);
    Json j;
    try {
      j = Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse_error, in + ": " + e.what());
    }
    if (inputs.size() > 1) std::cout << "== " << in << '\n';
    write_report(std::cout, j);
  }
  return 0;
}

// Trial data for the posterior command: either a service journal or a CSV
// with columns x1..xK,arm,y (arm 1-based, y empty while pending).
struct LoadedTrial {
  DesignConfig cfg;
  TrialData data;
};

LoadedTrial load_trial_data(const std::string& journal, const std::string& csv, int markers, int arms,
                            int depth, double phi) {
  LoadedTrial t;
  if (!journal.empty()) {
    const auto events = TrialService::read_journal(journal);
    require(!events.empty() && events.front().value("kind", "") == "trial_created", ErrorCode::parse_error,
            "journal must start with trial_created");
    t.cfg = design_from_json(events.front().at("config"));
    t.data = TrialData(static_cast<std::size_t>(t.cfg.n_markers()));
    for (const auto& ev : events) {
      const auto kind = ev.value("kind", "");
      if (kind == "patient_enrolled") t.data.add(ev.at("x").get<std::vector<double>>());
      else if (kind == "arm_assigned") t.data.arms[ev.at("patient").get<std::size_t>() - 1] = ev.at("arm").get<int>() - 1;
      else if (kind == "outcome_recorded") t.data.outcomes[ev.at("patient").get<std::size_t>() - 1] = ev.at("y").get<int>();
    }
    return t;
  }
  require(!csv.empty(), ErrorCode::invalid_argument, "give --journal or --data");
  t.cfg.prior = PriorParams::uniform(markers, phi, depth);
  t.cfg.n_arms = arms;
  t.data = TrialData(static_cast<std::size_t>(markers));
  std::ifstream is(csv);
  require(static_cast<bool>(is), ErrorCode::invalid_argument, "cannot read " + csv);
  std::string line;
  std::getline(is, line);  // header
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
    if (line.back() == ',') cells.emplace_back();
    const std::string where = csv + ":" + std::to_string(line_no);
    require(static_cast<int>(cells.size()) == markers + 2, ErrorCode::parse_error,
            where + ": expected " + std::to_string(markers + 2) + " columns");
    std::vector<double> x;
    for (int k = 0; k < markers; ++k) x.push_back(detail::parse_double(cells[static_cast<std::size_t>(k)], where));
    const int arm = detail::parse_int(cells[static_cast<std::size_t>(markers)], where) - 1;
    require(arm >= 0 && arm < arms, ErrorCode::parse_error, where + ": arm out of range");
    const auto& ys = cells[static_cast<std::size_t>(markers) + 1];
    const int y = ys.empty() ? -1 : detail::parse_int(ys, where);
    require(y >= -1 && y <= 1, ErrorCode::parse_error, where + ": y must be 0, 1 or empty");
    t.data.add(x, arm, y);
  }
  return t;
}

std::atomic<httplib::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SUBA adaptive trial design: simulation studies and live trial service"};
  app.require_subcommand(1);

  StudyFlags study_flags;
  auto* study = app.add_subcommand("study", "Run a simulation study");
  add_study_flags(study, study_flags);

  StudyFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "Run a sensitivity sweep over phi or N");
  add_study_flags(sweep, sweep_flags);
  sweep->add_option("--axis", sweep_flags.axis, "phi or N");

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "Print tables from study.json / sweep.json files");
  report->add_option("inputs", report_inputs, "JSON files")->required();

  int cat_markers = 4, cat_depth = 3;
  double cat_phi = 0.5;
  std::string cat_out, cat_in;
  auto* catalog = app.add_subcommand("catalog", "Export or check a partition catalog");
  catalog->add_option("--markers", cat_markers, "Number of biomarkers K");
  catalog->add_option("--depth", cat_depth, "Split rounds");
  catalog->add_option("--phi", cat_phi, "Marker-parsimony prior parameter");
  catalog->add_option("--out", cat_out, "Write the catalog to this file");
  catalog->add_option("--import", cat_in, "Read and validate a catalog file");

  std::string post_journal, post_csv, post_out, post_g, post_catalog;
  int post_markers = 4, post_arms = 3, post_depth = 3;
  double post_phi = 0.5;
  std::size_t post_top = 0;
  auto* posterior = app.add_subcommand("posterior", "Dump the posterior and co-clustering matrix of a trial");
  posterior->add_option("--journal", post_journal, "Service journal (.jsonl)");
  posterior->add_option("--data", post_csv, "CSV with x1..xK,arm,y");
  posterior->add_option("--markers", post_markers, "K for --data");
  posterior->add_option("--arms", post_arms, "Arms for --data");
  posterior->add_option("--depth", post_depth, "Split rounds for --data");
  posterior->add_option("--phi", post_phi, "phi for --data");
  posterior->add_option("--catalog", post_catalog, "Use this catalog file instead of the generated one");
  posterior->add_option("--top", post_top, "Only the most probable layouts");
  posterior->add_option("--out", post_out, "Posterior dump file (default stdout)");
  posterior->add_option("--g-matrix", post_g, "Write the posterior co-clustering matrix as CSV");

  std::string bind = "127.0.0.1:8080", token, static_dir;
  auto* serve = app.add_subcommand("serve", "Run the trial-conduct HTTP service");
  serve->add_option("--bind", bind, "host:port to listen on");
  serve->add_option("--token", token, "Require this bearer token");
  serve->add_option("--static-dir", static_dir, "Serve static assets from this directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*study) return run_study_cmd(study_flags);
    if (*sweep) return run_sweep_cmd(sweep_flags);
    if (*report) return run_report_cmd(report_inputs);
    if (*catalog) {
      if (!cat_in.empty()) {
        const auto c = load_catalog(cat_in);
        std::cout << "catalog ok: " << c.size() << " layouts, K=" << c.n_markers << ", depth=" << c.max_rounds
                  << (c.prior ? ", prior recognized" : ", custom weights") << '\n';
        return 0;
      }
      const auto c = make_catalog(PriorParams::uniform(cat_markers, cat_phi, cat_depth));
      if (cat_out.empty()) {
        write_catalog(std::cout, c);
      } else {
        save_catalog(cat_out, c);
        std::cerr << "wrote " << c.size() << " layouts to " << cat_out << '\n';
      }
      return 0;
    }
    if (*posterior) {
      auto t = load_trial_data(post_journal, post_csv, post_markers, post_arms, post_depth, post_phi);
      std::shared_ptr<const PartitionCatalog> cat =
          post_catalog.empty() ? shared_catalog(t.cfg.prior)
                               : std::make_shared<const PartitionCatalog>(load_catalog(post_catalog));
      require(cat->n_markers == static_cast<int>(t.data.n_markers()), ErrorCode::dimension_mismatch,
              "catalog and data disagree on K");
      const auto post = rebuild_posterior(cat, t.data, t.cfg.hyper, static_cast<std::size_t>(t.cfg.n_arms));
      if (post_out.empty()) {
        write_posterior(std::cout, post, post_top);
      } else {
        std::ofstream os(post_out);
        require(static_cast<bool>(os), ErrorCode::invalid_argument, "cannot write " + post_out);
        write_posterior(os, post, post_top);
      }
      if (!post_g.empty()) {
        std::ofstream os(post_g);
        require(static_cast<bool>(os), ErrorCode::invalid_argument, "cannot write " + post_g);
        write_matrix_csv(os, co_clustering(post, t.data), t.data.size());
      }
      return 0;
    }
    if (*serve) {
      TrialService::Options opt;
      if (const char* dir = std::getenv(journal_dir_env)) opt.journal_dir = fs::path(dir);
      else std::cerr << journal_dir_env << " not set; trials will not be persisted\n";
      TrialService service(opt);
      httplib::Server server;
      install_routes(server, service, {token, static_dir});
      const auto [host, port] = parse_bind_address(bind);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << host << ':' << port << " with " << service.trial_ids().size()
                << " trial(s) restored\n";
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot listen on " << bind << '\n';
        return 1;
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

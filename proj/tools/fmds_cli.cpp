#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fmds/commands.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
namespace cmd = fmds::cmd;

// Values from --config fill any flag not given on the command line.
class ConfigFile {
public:
  void load(const std::string &path) {
    if (path.empty())
      return;
    std::ifstream in(path);
    if (!in)
      throw fmds::Error(fmds::Errc::invalid_config, "cannot open config " + path);
    try {
      in >> doc_;
    } catch (const json::exception &ex) {
      throw fmds::Error(fmds::Errc::invalid_config, path + ": " + ex.what());
    }
    if (!doc_.is_object())
      throw fmds::Error(fmds::Errc::invalid_config, path + ": expected a JSON object");
  }

  template <class T>
  void fill(CLI::App &app, const std::string &flag, const std::string &key, T &target) const {
    if (app.count(flag) > 0 || !doc_.contains(key))
      return;
    try {
      target = doc_.at(key).get<T>();
    } catch (const json::exception &ex) {
      throw fmds::Error(fmds::Errc::invalid_config, "config key '" + key + "': " + ex.what());
    }
  }

  template <class T>
  void fill(CLI::App &app, const std::string &flag, const std::string &key,
            std::optional<T> &target) const {
    T value{};
    if (app.count(flag) > 0 || !doc_.contains(key))
      return;
    fill(app, flag, key, value);
    target = value;
  }

private:
  json doc_ = json::object();
};

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  int p = 2;
  int L = 0;
  double epsilon = 0.0;
  double alpha = 0.0;
  int max_sweeps = 0;
  std::string init = "mean";
};

void add_solver_flags(CLI::App *app, Common &c) {
  app->add_option("--epsilon", c.epsilon, "Convergence threshold on coefficient change")
      ->check(CLI::PositiveNumber);
  app->add_option("--alpha", c.alpha, "Adam step size")->check(CLI::PositiveNumber);
  app->add_option("--max-sweeps", c.max_sweeps, "Cap on sweeps over all pairs")
      ->check(CLI::PositiveNumber);
  app->add_option("--init", c.init, "Initialization: mean or per-timepoint")
      ->check(CLI::IsMember({"mean", "per-timepoint"}));
}

cmd::SolverOptions solver_options(CLI::App *app, const Common &c, const ConfigFile &cfg) {
  cmd::SolverOptions s;
  if (app->count("--alpha"))
    s.alpha = c.alpha;
  if (app->count("--epsilon"))
    s.epsilon = c.epsilon;
  if (app->count("--max-sweeps"))
    s.max_sweeps = c.max_sweeps;
  cfg.fill(*app, "--alpha", "alpha", s.alpha);
  cfg.fill(*app, "--epsilon", "epsilon", s.epsilon);
  cfg.fill(*app, "--max-sweeps", "max_sweeps", s.max_sweeps);
  return s;
}

fmds::InitStrategy init_strategy(const std::string &name) {
  if (name == "mean")
    return fmds::InitStrategy::mean_matrix;
  if (name == "per-timepoint")
    return fmds::InitStrategy::per_timepoint;
  throw fmds::Error(fmds::Errc::invalid_config, "unknown init '" + name + "'");
}

std::vector<double> parse_times(const std::string &list) {
  std::vector<double> out;
  for (const auto &field : fmds::io::split_csv_line(list))
    out.push_back(fmds::io::parse_double(field, "--t", 0));
  if (out.empty())
    throw fmds::Error(fmds::Errc::invalid_config, "--t needs at least one time");
  return out;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Functional multidimensional scaling"};
  app.set_version_flag("--version", std::string(cmd::tool_version));
  app.require_subcommand(1);

  // simulate
  Common sim;
  cmd::SimulateOptions sim_opts;
  bool desk = false, full = false;
  auto *simulate = app.add_subcommand("simulate", "Run the replicated simulation study");
  simulate->add_option("--n", sim_opts.n, "Objects per replication")->check(CLI::Range(2, 100000));
  simulate->add_option("--p", sim_opts.p, "Embedding dimension")->check(CLI::PositiveNumber);
  simulate->add_option("--L", sim_opts.L, "Interior knot counts")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  simulate->add_option("--m", sim_opts.m, "Grid sizes")->delimiter(',')->check(CLI::Range(2, 1000000));
  simulate->add_option("--reps", sim_opts.reps, "Replications per cell")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim_opts.seed, "Master seed");
  simulate->add_option("--out", sim.out, "Output directory");
  simulate->add_option("--config", sim.config, "JSON file with option defaults");
  auto *desk_flag = simulate->add_flag("--desk", desk, "n=50, p=2, L=5, m=15,50,100, reps=20");
  simulate->add_flag("--full", full, "L=5,10, m=15,50,100,200, reps=300")->excludes(desk_flag);
  add_solver_flags(simulate, sim);

  // fit
  Common fit;
  fit.L = cmd::FitOptions{}.L;
  fit.seed = cmd::FitOptions{}.seed;
  std::string prices, dissim;
  bool write_super = false;
  auto *fit_cmd = app.add_subcommand("fit", "Fit trajectories to prices or dissimilarities");
  auto *prices_opt =
      fit_cmd->add_option("--prices", prices, "Long-format price CSV (date,ticker,close)");
  fit_cmd->add_option("--dissim", dissim, "Long-format dissimilarity CSV (i,j,t,d)")
      ->excludes(prices_opt);
  fit_cmd->add_option("--p", fit.p, "Embedding dimension")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--L", fit.L, "Interior knots")->check(CLI::PositiveNumber);
  fit_cmd->add_option("--seed", fit.seed, "Seed for pair sampling");
  fit_cmd->add_option("--out", fit.out, "Output directory");
  fit_cmd->add_option("--config", fit.config, "JSON file with option defaults");
  fit_cmd->add_flag("--super-matrix", write_super, "Also write the super dissimilarity matrix");
  add_solver_flags(fit_cmd, fit);

  // snapshot
  std::string snap_coeffs, snap_times, snap_out = "fmds-snapshot";
  auto *snap = app.add_subcommand("snapshot", "Coordinates x_i(t) at chosen times");
  snap->add_option("--coeffs", snap_coeffs, "Coefficient CSV from fit")->required();
  snap->add_option("--t", snap_times, "Comma-separated times")->required();
  snap->add_option("--out", snap_out, "Output directory");

  // cluster
  std::string cl_coeffs, cl_center, cl_out = "fmds-cluster";
  double cl_threshold = 0.3, cl_t = 0.0;
  auto *clus = app.add_subcommand("cluster", "Threshold split around a center object");
  clus->add_option("--coeffs", cl_coeffs, "Coefficient CSV from fit")->required();
  clus->add_option("--center", cl_center, "Label of the center object")->required();
  clus->add_option("--threshold", cl_threshold, "Distance threshold")->check(CLI::PositiveNumber);
  clus->add_option("--t", cl_t, "Time")->required();
  clus->add_option("--out", cl_out, "Output directory");

  // shepard
  std::string sh_coeffs, sh_dissim, sh_out = "fmds-shepard";
  double sh_t = 0.0;
  auto *shep = app.add_subcommand("shepard", "Observed against fitted dissimilarities");
  shep->add_option("--coeffs", sh_coeffs, "Coefficient CSV from fit")->required();
  shep->add_option("--dissim", sh_dissim, "Dissimilarity CSV (i,j,t,d)")->required();
  auto *sh_t_opt = shep->add_option("--t", sh_t, "Single grid time (default all)");
  shep->add_option("--out", sh_out, "Output directory");

  // residuals
  std::string res_coeffs, res_dissim, res_out = "fmds-residuals";
  double res_tol = 0.1;
  auto *resid = app.add_subcommand("residuals", "Residual table and summary");
  resid->add_option("--coeffs", res_coeffs, "Coefficient CSV from fit")->required();
  resid->add_option("--dissim", res_dissim, "Dissimilarity CSV (i,j,t,d)")->required();
  resid->add_option("--tolerance", res_tol, "Absolute residual tolerance")
      ->check(CLI::PositiveNumber);
  resid->add_option("--out", res_out, "Output directory");

  // align
  std::string al_fitted, al_truth, al_out = "fmds-align", al_config;
  int al_m = 0;
  fmds::CurvilinearConfig al_cfg;
  auto *aln = app.add_subcommand("align", "Orthogonal alignment of fitted onto truth");
  aln->add_option("--fitted", al_fitted, "Fitted coefficient CSV")->required();
  aln->add_option("--truth", al_truth, "Reference coefficient CSV")->required();
  auto *al_m_opt = aln->add_option("--m", al_m, "Integration horizon")->check(CLI::Range(2, 1000000));
  aln->add_option("--seed", al_cfg.seed, "Seed for the random start");
  aln->add_option("--epsilon", al_cfg.epsilon, "Gradient norm tolerance")->check(CLI::PositiveNumber);
  aln->add_option("--max-iters", al_cfg.max_iters, "Iteration cap")->check(CLI::PositiveNumber);
  aln->add_option("--out", al_out, "Output directory");
  aln->add_option("--config", al_config, "JSON file with option defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return e.get_exit_code() == 0 ? code : 2;
  }

  try {
    if (*simulate) {
      ConfigFile cfg;
      cfg.load(sim.config);
      if (desk || full) {
        // Presets set the grid; explicit flags still win.
        cmd::SimulateOptions preset =
            desk ? cmd::SimulateOptions::desk() : cmd::SimulateOptions::full();
        if (simulate->count("--n") == 0)
          sim_opts.n = preset.n;
        if (simulate->count("--p") == 0)
          sim_opts.p = preset.p;
        if (simulate->count("--L") == 0)
          sim_opts.L = preset.L;
        if (simulate->count("--m") == 0)
          sim_opts.m = preset.m;
        if (simulate->count("--reps") == 0)
          sim_opts.reps = preset.reps;
      }
      cfg.fill(*simulate, "--n", "n", sim_opts.n);
      cfg.fill(*simulate, "--p", "p", sim_opts.p);
      cfg.fill(*simulate, "--L", "L", sim_opts.L);
      cfg.fill(*simulate, "--m", "m", sim_opts.m);
      cfg.fill(*simulate, "--reps", "reps", sim_opts.reps);
      cfg.fill(*simulate, "--seed", "seed", sim_opts.seed);
      cfg.fill(*simulate, "--out", "out", sim.out);
      cfg.fill(*simulate, "--init", "init", sim.init);
      sim_opts.solver = solver_options(simulate, sim, cfg);
      sim_opts.init = init_strategy(sim.init);
      sim_opts.out = sim.out.empty() ? fs::path("fmds-simulate") : fs::path(sim.out);
      const auto report = cmd::run_simulate(sim_opts, std::cerr);
      for (const auto &cell : report.cells)
        std::cout << "L=" << cell.L << " m=" << cell.m
                  << " rmse_dissim=" << fmds::io::fmt_double(cell.rmse_dissim)
                  << " rmse_coeff=" << fmds::io::fmt_double(cell.rmse_coeff) << '\n';
    } else if (*fit_cmd) {
      ConfigFile cfg;
      cfg.load(fit.config);
      cmd::FitOptions o;
      cfg.fill(*fit_cmd, "--p", "p", fit.p);
      cfg.fill(*fit_cmd, "--L", "L", fit.L);
      cfg.fill(*fit_cmd, "--seed", "seed", fit.seed);
      cfg.fill(*fit_cmd, "--out", "out", fit.out);
      cfg.fill(*fit_cmd, "--init", "init", fit.init);
      cfg.fill(*fit_cmd, "--prices", "prices", prices);
      cfg.fill(*fit_cmd, "--dissim", "dissim", dissim);
      if (!prices.empty())
        o.prices = prices;
      if (!dissim.empty())
        o.dissim = dissim;
      o.p = fit.p;
      o.L = fit.L;
      o.seed = fit.seed;
      o.solver = solver_options(fit_cmd, fit, cfg);
      o.init = init_strategy(fit.init);
      o.write_super = write_super;
      o.out = fit.out.empty() ? fs::path("fmds-fit") : fs::path(fit.out);
      const auto outcome = cmd::run_fit(o, std::cerr);
      std::cout << "n=" << outcome.series.n() << " m=" << outcome.series.m()
                << " F=" << fmds::io::fmt_double(outcome.result.final_F)
                << " sweeps=" << outcome.result.sweeps_used << '\n';
    } else if (*snap) {
      cmd::run_snapshot(snap_coeffs, parse_times(snap_times), snap_out);
    } else if (*clus) {
      const auto r = cmd::run_cluster(cl_coeffs, cl_center, cl_threshold, cl_t, cl_out);
      std::cout << "red=" << r.red.size() << " blue=" << r.blue.size() << '\n';
    } else if (*shep) {
      std::optional<double> t;
      if (sh_t_opt->count())
        t = sh_t;
      cmd::run_shepard(sh_coeffs, sh_dissim, t, sh_out);
    } else if (*resid) {
      const auto r = cmd::run_residuals(res_coeffs, res_dissim, res_tol, res_out);
      std::cout << "pair_fraction=" << fmds::io::fmt_double(r.summary.pair_fraction)
                << " cell_fraction=" << fmds::io::fmt_double(r.summary.cell_fraction) << '\n';
    } else if (*aln) {
      ConfigFile cfg;
      cfg.load(al_config);
      cfg.fill(*aln, "--seed", "seed", al_cfg.seed);
      cfg.fill(*aln, "--epsilon", "epsilon", al_cfg.epsilon);
      cfg.fill(*aln, "--max-iters", "max_iters", al_cfg.max_iters);
      cfg.fill(*aln, "--out", "out", al_out);
      std::optional<int> m;
      if (al_m_opt->count())
        m = al_m;
      const auto r = cmd::run_align(al_fitted, al_truth, m, al_cfg, al_out);
      std::cout << "objective=" << fmds::io::fmt_double(r.objective)
                << " det=" << r.det_sign << '\n';
    }
  } catch (const fmds::Error &e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == fmds::Errc::invalid_config ? 2 : 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

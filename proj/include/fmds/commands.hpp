#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fmds/align.hpp"
#include "fmds/basis.hpp"
#include "fmds/cmds.hpp"
#include "fmds/dissim.hpp"
#include "fmds/io.hpp"
#include "fmds/optimizer.hpp"
#include "fmds/report.hpp"
#include "fmds/simharness.hpp"

// File-in, file-out drivers behind the `fmds` subcommands. Each driver writes
// its outputs plus one manifest.json into the output directory.

namespace fmds::cmd {

#ifndef FMDS_VERSION
#define FMDS_VERSION "0.0.0"
#endif

inline constexpr const char *tool_version = FMDS_VERSION;

namespace fs = std::filesystem;
using nlohmann::json;

/// Collects manifest fields while a command runs.
class Manifest {
public:
  explicit Manifest(std::string command)
      : started_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = tool_version;
    doc_["started_at"] = io::utc_timestamp();
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  void input(const fs::path &path) {
    doc_["inputs"].push_back({{"path", path.string()}, {"sha256", io::sha256_file(path)}});
  }
  void output(const fs::path &path) { doc_["outputs"].push_back(path.filename().string()); }
  json &operator[](const std::string &key) { return doc_[key]; }

  void write(const fs::path &dir) {
    doc_["finished_at"] = io::utc_timestamp();
    doc_["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    auto out = io::open_out(dir / "manifest.json");
    out << doc_.dump(2) << '\n';
  }

private:
  json doc_;
  std::chrono::steady_clock::time_point started_;
};

/// Optimizer flags shared by `simulate` and `fit`; unset fields keep defaults.
struct SolverOptions {
  std::optional<double> alpha;
  std::optional<double> epsilon;
  std::optional<int> max_sweeps;

  void apply(FitConfig &cfg) const {
    if (alpha)
      cfg.alpha = *alpha;
    if (epsilon)
      cfg.epsilon = *epsilon;
    if (max_sweeps)
      cfg.max_sweeps = *max_sweeps;
  }
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  int n = 50;
  int p = 2;
  std::vector<int> L{5};
  std::vector<int> m{15};
  int reps = 20;
  std::uint64_t seed = 7;
  SolverOptions solver;
  InitStrategy init = InitStrategy::mean_matrix;
  fs::path out = "fmds-simulate";

  /// Laptop-scale study: n=50, p=2, L=5, m in {15, 50, 100}, 20 replications.
  static SimulateOptions desk() {
    SimulateOptions o;
    o.m = {15, 50, 100};
    return o;
  }

  /// Full replication grid: L in {5, 10}, m in {15, 50, 100, 200}, 300 reps.
  static SimulateOptions full() {
    SimulateOptions o;
    o.L = {5, 10};
    o.m = {15, 50, 100, 200};
    o.reps = 300;
    return o;
  }
};

/// Sweep cap used by the simulation study unless overridden. The pairwise
/// updates keep cycling between pair-optimal configurations, so the
/// between-sweep change rarely drops below epsilon at n = 50; one sweep
/// visits every pair at least once.
inline constexpr int study_default_sweeps = 1;

inline std::vector<ScenarioConfig> study_grid(const SimulateOptions &o) {
  std::vector<ScenarioConfig> grid;
  for (int L : o.L)
    for (int m : o.m) {
      ScenarioConfig c;
      c.n = o.n;
      c.p = o.p;
      c.L = L;
      c.m = m;
      c.reps = o.reps;
      c.seed = o.seed;
      c.init = o.init;
      c.fit.max_sweeps = study_default_sweeps;
      o.solver.apply(c.fit);
      grid.push_back(c);
    }
  return grid;
}

inline void write_study(const StudyReport &report, const fs::path &dir) {
  {
    auto out = io::open_out(dir / "replications.csv");
    out << "L,m,rep,mse_dissim,mse_coeff\n";
    for (const auto &cell : report.cells)
      for (const auto &r : cell.reps)
        out << cell.L << ',' << cell.m << ',' << r.rep + 1 << ','
            << io::fmt_double(r.mse_dissim) << ',' << io::fmt_double(r.mse_coeff) << '\n';
  }
  auto out = io::open_out(dir / "aggregate.csv");
  out << "L,m,rmse_dissim,rmse_coeff\n";
  for (const auto &cell : report.cells)
    out << cell.L << ',' << cell.m << ',' << io::fmt_double(cell.rmse_dissim) << ','
        << io::fmt_double(cell.rmse_coeff) << '\n';
}

inline StudyReport run_simulate(const SimulateOptions &o, std::ostream &log) {
  Manifest manifest("simulate");
  const auto grid = study_grid(o);
  const StudyReport report = run_study(grid);
  for (const auto &w : report.warnings)
    log << "warning: " << w << '\n';
  write_study(report, o.out);

  json cells = json::array();
  json fit_seconds = json::array();
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const auto &cfg = grid[c];
    const auto &cell = report.cells[c];
    json seeds = json::array();
    for (const auto &r : cell.reps) {
      seeds.push_back(r.seed);
      fit_seconds.push_back(
          {{"L", cell.L}, {"m", cell.m}, {"rep", r.rep + 1}, {"seconds", r.fit_seconds}});
    }
    cells.push_back({{"L", cfg.L},
                     {"m", cfg.m},
                     {"n", cfg.n},
                     {"p", cfg.p},
                     {"reps", cfg.reps},
                     {"fit", io::fit_config_json(cfg.fit)},
                     {"replication_seeds", seeds},
                     {"failures", cell.failures},
                     {"wall_seconds", cell.wall_seconds}});
  }
  manifest["seed"] = o.seed;
  manifest["config"] = {{"n", o.n}, {"p", o.p}, {"L", o.L}, {"m", o.m}, {"reps", o.reps},
                        {"init", o.init == InitStrategy::mean_matrix ? "mean" : "per-timepoint"}};
  manifest["cells"] = cells;
  manifest["fit_wall_seconds"] = fit_seconds;
  manifest["warnings"] = report.warnings;
  manifest.output("replications.csv");
  manifest.output("aggregate.csv");
  manifest.write(o.out);
  return report;
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  std::optional<fs::path> prices;
  std::optional<fs::path> dissim;
  int p = 2;
  int L = 6;
  std::uint64_t seed = 1;
  SolverOptions solver;
  InitStrategy init = InitStrategy::mean_matrix;
  bool write_super = false;
  fs::path out = "fmds-fit";
};

struct FitOutcome {
  DissimilaritySeries series;
  io::CoeffModel model;
  FitResult result;
  std::int64_t super_rows = 0;
};

inline FitOutcome run_fit(const FitOptions &o, std::ostream &log) {
  if (o.prices.has_value() == o.dissim.has_value())
    throw Error(Errc::invalid_config, "fit needs exactly one of --prices or --dissim");
  Manifest manifest("fit");

  DissimilaritySeries series;
  std::vector<std::string> month_keys;
  if (o.prices) {
    manifest.input(*o.prices);
    io::PriceIngest ingest = io::read_prices(*o.prices);
    for (const auto &w : ingest.warnings)
      log << "warning: " << w << '\n';
    manifest["warnings"] = ingest.warnings;
    month_keys = ingest.panel.months;
    series = correlation_dissim(ingest.panel);
  } else {
    manifest.input(*o.dissim);
    series = io::read_dissim_long(*o.dissim);
  }

  const auto grid = series.grid();
  BasisSpec spec = make_basis(o.L, grid.front(), grid.back());
  FitConfig cfg;
  cfg.seed = o.seed;
  o.solver.apply(cfg);
  const CoeffSet init = init_coeffs(series, spec, o.p, o.init);
  FitResult result = fit(series, spec, o.p, cfg, init);
  if (result.pair_cap_hits > 0)
    log << "warning: " << result.pair_cap_hits << " pair runs hit the step cap of "
        << cfg.pair_step_cap << '\n';

  io::CoeffModel model{result.coeffs, spec, series.labels(), o.seed, io::fit_config_json(cfg)};
  io::write_coeffs(o.out / "coeffs.csv", model);
  {
    auto out = io::open_out(o.out / "dissim.csv");
    io::write_dissim_long(out, series);
  }
  {
    auto out = io::open_out(o.out / "fit_trace.csv");
    out << "sweep,F,max_change\n";
    for (std::size_t s = 0; s < result.loss_trace.size(); ++s)
      out << s + 1 << ',' << io::fmt_double(result.loss_trace[s]) << ','
          << io::fmt_double(result.change_trace[s]) << '\n';
  }
  manifest.output("coeffs.csv");
  manifest.output("coeffs.json");
  manifest.output("dissim.csv");
  manifest.output("fit_trace.csv");
  if (o.write_super) {
    auto out = io::open_out(o.out / "super_matrix.csv");
    io::write_super_matrix(out, series);
    manifest.output("super_matrix.csv");
  }

  const std::int64_t super_rows = build_super_matrix(series).rows();
  manifest["seed"] = o.seed;
  manifest["config"] = {{"p", o.p},
                        {"L", o.L},
                        {"q", spec.q()},
                        {"domain", {spec.domain_lo(), spec.domain_hi()}},
                        {"init", o.init == InitStrategy::mean_matrix ? "mean" : "per-timepoint"},
                        {"fit", io::fit_config_json(cfg)}};
  manifest["n"] = series.n();
  manifest["m"] = series.m();
  manifest["months"] = month_keys;
  manifest["super_matrix"] = {{"rows", super_rows}, {"cols", series.m()}};
  manifest["fit"] = {{"initial_F", result.initial_F},
                     {"final_F", result.final_F},
                     {"sweeps_used", result.sweeps_used},
                     {"converged", result.converged},
                     {"pair_runs", result.pair_runs},
                     {"adam_steps", result.adam_steps},
                     {"pair_cap_hits", result.pair_cap_hits}};
  manifest["fit_wall_seconds"] = result.wall_seconds;
  manifest.write(o.out);
  return {std::move(series), std::move(model), std::move(result), super_rows};
}

// ---------------------------------------------------------------------------
// snapshot / cluster / shepard / residuals

inline std::vector<SnapshotRow> run_snapshot(const fs::path &coeffs_path,
                                             const std::vector<double> &times,
                                             const fs::path &out_dir) {
  Manifest manifest("snapshot");
  manifest.input(coeffs_path);
  manifest.input(io::sidecar_path(coeffs_path));
  const io::CoeffModel model = io::read_coeffs(coeffs_path);
  const auto rows = snapshot(model.coeffs, model.spec, times);

  auto out = io::open_out(out_dir / "snapshot.csv");
  out << "object,t";
  for (int r = 0; r < model.coeffs.p(); ++r)
    out << ",x" << r + 1;
  out << '\n';
  for (const auto &row : rows) {
    out << model.label(row.object) << ',' << io::fmt_double(row.t);
    for (Eigen::Index r = 0; r < row.x.size(); ++r)
      out << ',' << io::fmt_double(row.x(r));
    out << '\n';
  }
  manifest["times"] = times;
  manifest.output("snapshot.csv");
  manifest.write(out_dir);
  return rows;
}

inline ClusterReport run_cluster(const fs::path &coeffs_path, const std::string &center,
                                 double threshold, double t, const fs::path &out_dir) {
  Manifest manifest("cluster");
  manifest.input(coeffs_path);
  manifest.input(io::sidecar_path(coeffs_path));
  const io::CoeffModel model = io::read_coeffs(coeffs_path);
  const ClusterReport report =
      cluster(model.coeffs, model.spec, model.find_label(center), threshold, t);

  auto out = io::open_out(out_dir / "cluster.csv");
  out << "object,distance,cluster\n";
  for (const auto &mbr : report.red)
    out << model.label(mbr.object) << ',' << io::fmt_double(mbr.distance) << ",red\n";
  for (const auto &mbr : report.blue)
    out << model.label(mbr.object) << ',' << io::fmt_double(mbr.distance) << ",blue\n";
  manifest["config"] = {{"center", center}, {"threshold", threshold}, {"t", t}};
  manifest["red"] = report.red.size();
  manifest["blue"] = report.blue.size();
  manifest.output("cluster.csv");
  manifest.write(out_dir);
  return report;
}

inline void check_grid_compatible(const io::CoeffModel &model,
                                  const DissimilaritySeries &series) {
  if (model.coeffs.n() != series.n())
    throw Error(Errc::dimension_mismatch,
                "coefficient file has n=" + std::to_string(model.coeffs.n()) +
                    " but dissimilarities have n=" + std::to_string(series.n()));
  for (double t : series.grid())
    if (!model.spec.contains(t))
      throw Error(Errc::dimension_mismatch, "dissimilarity grid outside the fitted domain");
}

struct ShepardOutcome {
  std::vector<PairResidual> rows;
  std::vector<double> correlation; // per grid point, in grid order
};

/// `t` selects one grid time; empty means every grid point.
inline ShepardOutcome run_shepard(const fs::path &coeffs_path, const fs::path &dissim_path,
                                  std::optional<double> t, const fs::path &out_dir) {
  Manifest manifest("shepard");
  manifest.input(coeffs_path);
  manifest.input(io::sidecar_path(coeffs_path));
  manifest.input(dissim_path);
  const io::CoeffModel model = io::read_coeffs(coeffs_path);
  const DissimilaritySeries series = io::read_dissim_long(dissim_path);
  check_grid_compatible(model, series);

  int only_k = -1;
  if (t) {
    const auto grid = series.grid();
    const auto it = std::find(grid.begin(), grid.end(), *t);
    if (it == grid.end())
      throw Error(Errc::out_of_range, "t is not a grid time of the dissimilarity file");
    only_k = static_cast<int>(it - grid.begin());
  }
  ShepardOutcome outcome;
  outcome.rows = shepard(model.coeffs, model.spec, series, only_k);
  {
    auto out = io::open_out(out_dir / "shepard.csv");
    out << "i,j,t,observed,estimated\n";
    for (const auto &r : outcome.rows)
      out << r.i + 1 << ',' << r.j + 1 << ','
          << io::fmt_double(series.grid()[static_cast<std::size_t>(r.k)]) << ','
          << io::fmt_double(r.observed) << ',' << io::fmt_double(r.estimated) << '\n';
  }
  {
    auto out = io::open_out(out_dir / "shepard_summary.csv");
    out << "t,pearson\n";
    for (int k = 0; k < series.m(); ++k) {
      if (only_k >= 0 && k != only_k)
        continue;
      std::vector<double> obs, est;
      for (const auto &r : outcome.rows)
        if (r.k == k) {
          obs.push_back(r.observed);
          est.push_back(r.estimated);
        }
      const double corr = pearson(obs, est);
      outcome.correlation.push_back(corr);
      out << io::fmt_double(series.grid()[static_cast<std::size_t>(k)]) << ','
          << io::fmt_double(corr) << '\n';
    }
  }
  manifest.output("shepard.csv");
  manifest.output("shepard_summary.csv");
  manifest.write(out_dir);
  return outcome;
}

struct ResidualOutcome {
  std::vector<PairResidual> rows;
  ResidualSummary summary;
};

inline ResidualOutcome run_residuals(const fs::path &coeffs_path, const fs::path &dissim_path,
                                     double tolerance, const fs::path &out_dir) {
  Manifest manifest("residuals");
  manifest.input(coeffs_path);
  manifest.input(io::sidecar_path(coeffs_path));
  manifest.input(dissim_path);
  const io::CoeffModel model = io::read_coeffs(coeffs_path);
  const DissimilaritySeries series = io::read_dissim_long(dissim_path);
  check_grid_compatible(model, series);

  ResidualOutcome outcome;
  outcome.rows = shepard(model.coeffs, model.spec, series);
  outcome.summary = summarize_residuals(outcome.rows, series.n(), tolerance);
  {
    auto out = io::open_out(out_dir / "residuals.csv");
    out << "i,j,t,residual\n";
    for (const auto &r : outcome.rows)
      out << r.i + 1 << ',' << r.j + 1 << ','
          << io::fmt_double(series.grid()[static_cast<std::size_t>(r.k)]) << ','
          << io::fmt_double(r.residual()) << '\n';
  }
  const auto &s = outcome.summary;
  const json summary = {{"tolerance", s.tolerance},
                        {"mean_residual", s.mean},
                        {"mean_abs_residual", s.mean_abs},
                        {"max_abs_residual", s.max_abs},
                        {"pairs", s.pairs},
                        {"cells", s.cells},
                        {"pair_fraction_within_tolerance", s.pair_fraction},
                        {"cell_fraction_within_tolerance", s.cell_fraction},
                        {"pair_fraction_definition",
                         "share of pairs whose largest |residual| over all grid times is <= tolerance"},
                        {"cell_fraction_definition",
                         "share of (pair, time) cells with |residual| <= tolerance"}};
  {
    auto out = io::open_out(out_dir / "residual_summary.json");
    out << summary.dump(2) << '\n';
  }
  manifest["summary"] = summary;
  manifest.output("residuals.csv");
  manifest.output("residual_summary.json");
  manifest.write(out_dir);
  return outcome;
}

// ---------------------------------------------------------------------------
// align

inline json alignment_json(const AlignmentResult &r) {
  json gamma = json::array();
  for (Eigen::Index i = 0; i < r.gamma_hat.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.gamma_hat.cols(); ++j)
      row.push_back(r.gamma_hat(i, j));
    gamma.push_back(row);
  }
  return {{"gamma_hat", gamma},
          {"objective", r.objective},
          {"grad_norm", r.grad_norm},
          {"iterations", r.iters},
          {"converged", r.converged},
          {"det_component", r.det_sign},
          {"identity_objective", r.identity_objective},
          {"max_feasibility_error", r.max_feasibility_error}};
}

/// Aligns `fitted` onto `truth`; both files must share n, p, q and basis.
/// m defaults to the right end of the basis domain.
inline AlignmentResult run_align(const fs::path &fitted_path, const fs::path &truth_path,
                                 std::optional<int> m, const CurvilinearConfig &config,
                                 const fs::path &out_dir) {
  Manifest manifest("align");
  manifest.input(fitted_path);
  manifest.input(truth_path);
  const io::CoeffModel fitted = io::read_coeffs(fitted_path);
  const io::CoeffModel truth = io::read_coeffs(truth_path);
  if (!(fitted.spec == truth.spec))
    throw Error(Errc::dimension_mismatch, "fitted and truth use different bases");
  const int horizon = m.value_or(static_cast<int>(std::floor(fitted.spec.domain_hi())));
  const AlignmentResult result =
      align(fitted.coeffs, truth.coeffs, fitted.spec, horizon, config);
  const json report = alignment_json(result);
  {
    auto out = io::open_out(out_dir / "alignment.json");
    out << report.dump(2) << '\n';
  }
  manifest["seed"] = config.seed;
  manifest["config"] = {{"m", horizon},       {"rho1", config.rho1},
                        {"delta", config.delta}, {"eta", config.eta},
                        {"epsilon", config.epsilon}, {"tau0", config.tau0},
                        {"max_iters", config.max_iters},
                        {"try_reflection", config.try_reflection}};
  manifest.output("alignment.json");
  manifest.write(out_dir);
  return result;
}

} // namespace fmds::cmd

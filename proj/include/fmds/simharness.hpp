#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fmds/align.hpp"
#include "fmds/basis.hpp"
#include "fmds/cmds.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/dissim.hpp"
#include "fmds/error.hpp"
#include "fmds/optimizer.hpp"

namespace fmds {

/// One simulation cell (L, m) with its replication count and solver settings.
struct ScenarioConfig {
  int n = 50;
  int p = 2;
  int L = 5;
  int m = 15;
  int reps = 20;
  Eigen::MatrixXd sigma; // pq x pq covariance; empty means identity
  std::uint64_t seed = 7;
  FitConfig fit;
  CurvilinearConfig align;
  InitStrategy init = InitStrategy::mean_matrix;

  int q() const noexcept { return L + BasisSpec::order; }

  void validate() const {
    if (n < 2 || p < 1 || L < 1 || m < 2 || reps < 1)
      throw Error(Errc::invalid_config, "scenario needs n>=2, p>=1, L>=1, m>=2, reps>=1");
    if (sigma.size() > 0) {
      const int pq = p * q();
      if (sigma.rows() != pq || sigma.cols() != pq)
        throw Error(Errc::dimension_mismatch, "sigma must be pq x pq");
      if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw Error(Errc::non_symmetric, "sigma must be symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
      if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, sigma.norm()))
        throw Error(Errc::invalid_config, "sigma must be positive semidefinite");
    }
    fit.validate();
    align.validate();
  }
};

/// Seed for one replication, a pure function of (master, L, m, rep, stream).
inline std::uint64_t derive_seed(std::uint64_t master, int L, int m, int rep,
                                 std::uint32_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master),
                    static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(L), static_cast<std::uint32_t>(m),
                    static_cast<std::uint32_t>(rep), stream};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

struct Scenario {
  CoeffSet truth;
  DissimilaritySeries series;
  BasisSpec spec;
};

inline std::vector<double> integer_grid(int m) {
  std::vector<double> grid(static_cast<std::size_t>(m));
  std::iota(grid.begin(), grid.end(), 1.0);
  return grid;
}

/// Ground-truth coefficients with vec(C_i) ~ N(0, sigma) and the Euclidean
/// series they induce on t_k = k, k = 1..m, over the basis domain [1, m].
inline Scenario gen_scenario(const ScenarioConfig &config, int rep) {
  config.validate();
  const int q = config.q();
  const int pq = config.p * q;
  BasisSpec spec = make_basis(config.L, 1.0, static_cast<double>(config.m));

  Eigen::MatrixXd factor;
  if (config.sigma.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(config.sigma);
    factor = eig.eigenvectors() *
             eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }

  std::mt19937_64 rng(derive_seed(config.seed, config.L, config.m, rep, 0));
  std::normal_distribution<double> normal;
  std::vector<Eigen::MatrixXd> mats;
  mats.reserve(static_cast<std::size_t>(config.n));
  Eigen::VectorXd z(pq);
  for (int i = 0; i < config.n; ++i) {
    for (int a = 0; a < pq; ++a)
      z(a) = normal(rng);
    const Eigen::VectorXd v = factor.size() > 0 ? Eigen::VectorXd(factor * z) : z;
    // vec() stacks columns, matching Eigen's column-major layout.
    mats.emplace_back(Eigen::Map<const Eigen::MatrixXd>(v.data(), config.p, q));
  }
  CoeffSet truth(std::move(mats));
  DissimilaritySeries series = euclidean_series(truth, spec, integer_grid(config.m));
  return {std::move(truth), std::move(series), std::move(spec)};
}

/// Mean squared error between observed and fitted dissimilarities over all
/// pairs and grid points.
inline double mse_dissim(const DissimilaritySeries &series, const CoeffSet &fitted,
                         const BasisSpec &spec) {
  if (fitted.n() != series.n() || fitted.q() != spec.q())
    throw Error(Errc::dimension_mismatch, "fitted coefficients do not match series");
  const Eigen::MatrixXd estimated =
      euclidean_series(fitted, spec, {series.grid().begin(), series.grid().end()})
          .values();
  const double count = static_cast<double>(series.m()) *
                       static_cast<double>(pair_count(series.n()));
  return (series.values() - estimated).squaredNorm() / count;
}

/// sqrt of the mean of per-replication MSE values.
inline double rmse(const std::vector<double> &mse_values) {
  if (mse_values.empty())
    throw Error(Errc::empty_input, "no MSE values to aggregate");
  const double sum = std::accumulate(mse_values.begin(), mse_values.end(), 0.0);
  return std::sqrt(sum / static_cast<double>(mse_values.size()));
}

inline double rmse_dissim(const std::vector<double> &mse_values) {
  return rmse(mse_values);
}

/// Mean squared difference between vec(Gamma C_hat_i) and vec(C_i^(y)).
inline double mse_coeff(const Eigen::MatrixXd &gamma_hat, const CoeffSet &fitted,
                        const CoeffSet &truth) {
  if (!fitted.same_shape(truth))
    throw Error(Errc::dimension_mismatch, "fitted and truth differ in shape");
  if (gamma_hat.rows() != fitted.p() || gamma_hat.cols() != fitted.p())
    throw Error(Errc::dimension_mismatch, "gamma must be p x p");
  double total = 0.0;
  for (int i = 0; i < fitted.n(); ++i)
    total += (gamma_hat * fitted[i] - truth[i]).squaredNorm();
  return total / (static_cast<double>(fitted.n()) * fitted.p() * fitted.q());
}

struct ReplicationRecord {
  int rep = 0;
  double mse_dissim = 0.0;
  double mse_coeff = 0.0;
  double initial_F = 0.0;
  double final_F = 0.0;
  int sweeps = 0;
  bool fit_converged = false;
  double align_objective = 0.0;
  int align_det_sign = 1;
  std::uint64_t seed = 0;
  double fit_seconds = 0.0;
};

struct StudyCell {
  int L = 0;
  int m = 0;
  int n = 0;
  double rmse_dissim = 0.0;
  double rmse_coeff = 0.0;
  std::vector<ReplicationRecord> reps;
  std::vector<std::string> failures;
  double wall_seconds = 0.0;
};

struct StudyReport {
  std::vector<StudyCell> cells;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;

  const StudyCell *find(int L, int m) const {
    for (const auto &c : cells)
      if (c.L == L && c.m == m)
        return &c;
    return nullptr;
  }
};

/// Generate, initialize, fit and align one replication.
inline ReplicationRecord run_replication(const ScenarioConfig &config, int rep) {
  Scenario sc = gen_scenario(config, rep);
  ReplicationRecord rec;
  rec.rep = rep;
  rec.seed = derive_seed(config.seed, config.L, config.m, rep, 0);

  FitConfig fit_cfg = config.fit;
  fit_cfg.seed = derive_seed(config.seed, config.L, config.m, rep, 1);
  const CoeffSet init = init_coeffs(sc.series, sc.spec, config.p, config.init);
  const FitResult fitted = fit(sc.series, sc.spec, config.p, fit_cfg, init);

  CurvilinearConfig align_cfg = config.align;
  align_cfg.seed = derive_seed(config.seed, config.L, config.m, rep, 2);
  const AlignmentResult aligned =
      align(fitted.coeffs, sc.truth, sc.spec, config.m, align_cfg);

  rec.mse_dissim = mse_dissim(sc.series, fitted.coeffs, sc.spec);
  rec.mse_coeff = mse_coeff(aligned.gamma_hat, fitted.coeffs, sc.truth);
  rec.initial_F = fitted.initial_F;
  rec.final_F = fitted.final_F;
  rec.sweeps = fitted.sweeps_used;
  rec.fit_converged = fitted.converged;
  rec.align_objective = aligned.objective;
  rec.align_det_sign = aligned.det_sign;
  rec.fit_seconds = fitted.wall_seconds;
  return rec;
}

/// Runs every replication of every cell. A replication that throws is
/// recorded as a failure with a warning and excluded from the RMSE.
inline StudyReport run_study(const std::vector<ScenarioConfig> &grid) {
  if (grid.empty())
    throw Error(Errc::empty_input, "study grid is empty");
  for (const auto &cfg : grid)
    cfg.validate();

  const auto started = std::chrono::steady_clock::now();
  StudyReport report;
  for (const auto &cfg : grid) {
    const auto cell_start = std::chrono::steady_clock::now();
    StudyCell cell;
    cell.L = cfg.L;
    cell.m = cfg.m;
    cell.n = cfg.n;
    std::vector<double> dissim_mse, coeff_mse;
    for (int rep = 0; rep < cfg.reps; ++rep) {
      try {
        ReplicationRecord rec = run_replication(cfg, rep);
        dissim_mse.push_back(rec.mse_dissim);
        coeff_mse.push_back(rec.mse_coeff);
        cell.reps.push_back(rec);
      } catch (const std::exception &ex) {
        const std::string msg = "L=" + std::to_string(cfg.L) + " m=" +
                                std::to_string(cfg.m) + " rep=" +
                                std::to_string(rep) + " failed: " + ex.what();
        cell.failures.push_back(msg);
        report.warnings.push_back(msg);
      }
    }
    if (dissim_mse.empty()) {
      report.warnings.push_back("L=" + std::to_string(cfg.L) + " m=" +
                                std::to_string(cfg.m) + ": every replication failed");
      cell.rmse_dissim = cell.rmse_coeff = std::numeric_limits<double>::quiet_NaN();
    } else {
      cell.rmse_dissim = rmse_dissim(dissim_mse);
      cell.rmse_coeff = rmse(coeff_mse);
    }
    cell.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - cell_start)
            .count();
    report.cells.push_back(std::move(cell));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

} // namespace fmds

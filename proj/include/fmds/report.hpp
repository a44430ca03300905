#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fmds/basis.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/dissim.hpp"
#include "fmds/error.hpp"

// Read-only reports over fitted trajectories x_i(t) = C_i beta(t).

namespace fmds {

struct SnapshotRow {
  int object;
  double t;
  Eigen::VectorXd x;
};

inline std::vector<SnapshotRow> snapshot(const CoeffSet &coeffs, const BasisSpec &spec,
                                         const std::vector<double> &times) {
  std::vector<SnapshotRow> rows;
  rows.reserve(times.size() * static_cast<std::size_t>(coeffs.n()));
  for (double t : times) {
    const Eigen::VectorXd beta = eval_basis(spec, t);
    for (int i = 0; i < coeffs.n(); ++i)
      rows.push_back({i, t, coeffs[i] * beta});
  }
  return rows;
}

struct ClusterMember {
  int object;
  double distance;
};

struct ClusterReport {
  int center = 0;
  double threshold = 0.3;
  double t = 0.0;
  std::vector<ClusterMember> red;  // distance < threshold
  std::vector<ClusterMember> blue; // distance >= threshold
};

/// Splits all non-center objects by their fitted distance to `center` at t.
inline ClusterReport cluster(const CoeffSet &coeffs, const BasisSpec &spec, int center,
                             double threshold, double t) {
  if (center < 0 || center >= coeffs.n())
    throw Error(Errc::unknown_label, "center index out of range");
  if (!(threshold > 0.0))
    throw Error(Errc::invalid_config, "threshold must be positive");
  const Eigen::VectorXd beta = eval_basis(spec, t);
  const Eigen::VectorXd origin = coeffs[center] * beta;
  ClusterReport report{center, threshold, t, {}, {}};
  for (int j = 0; j < coeffs.n(); ++j) {
    if (j == center)
      continue;
    const double d = (coeffs[j] * beta - origin).norm();
    (d < threshold ? report.red : report.blue).push_back({j, d});
  }
  return report;
}

struct PairResidual {
  int i;
  int j;
  int k;
  double observed;
  double estimated;
  double residual() const { return estimated - observed; }
};

inline void check_report_inputs(const CoeffSet &coeffs, const BasisSpec &spec,
                                const DissimilaritySeries &series) {
  if (coeffs.n() != series.n())
    throw Error(Errc::dimension_mismatch, "coefficient n differs from series n");
  if (coeffs.q() != spec.q())
    throw Error(Errc::dimension_mismatch, "coefficient q differs from basis q");
  for (double t : series.grid())
    if (!spec.contains(t))
      throw Error(Errc::out_of_domain, "series grid outside basis domain");
}

/// Observed against fitted dissimilarity for every pair at the selected grid
/// indices (all when `only_k` is negative).
inline std::vector<PairResidual> shepard(const CoeffSet &coeffs, const BasisSpec &spec,
                                         const DissimilaritySeries &series,
                                         int only_k = -1) {
  check_report_inputs(coeffs, spec, series);
  if (only_k >= series.m())
    throw Error(Errc::out_of_range, "time index outside series grid");
  std::vector<PairResidual> rows;
  for (int k = 0; k < series.m(); ++k) {
    if (only_k >= 0 && k != only_k)
      continue;
    const Eigen::VectorXd beta = eval_basis(spec, series.grid()[static_cast<std::size_t>(k)]);
    std::vector<Eigen::VectorXd> x;
    x.reserve(static_cast<std::size_t>(coeffs.n()));
    for (const auto &c : coeffs)
      x.push_back(c * beta);
    for (int j = 1; j < series.n(); ++j)
      for (int i = 0; i < j; ++i)
        rows.push_back({i, j, k, series(i, j, k),
                        (x[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(j)]).norm()});
  }
  return rows;
}

inline double pearson(const std::vector<double> &a, const std::vector<double> &b) {
  const auto n = static_cast<Eigen::Index>(a.size());
  if (n < 2 || a.size() != b.size())
    throw Error(Errc::insufficient_data, "pearson needs two equal-length samples");
  const Eigen::Map<const Eigen::VectorXd> x(a.data(), n), y(b.data(), n);
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double denom = xc.norm() * yc.norm();
  if (denom == 0.0)
    throw Error(Errc::degenerate_series, "pearson of a constant sample");
  return xc.dot(yc) / denom;
}

/// Pearson correlation of observed vs fitted dissimilarities per grid index.
inline std::vector<double> shepard_correlation(const std::vector<PairResidual> &rows,
                                               int m) {
  std::vector<std::vector<double>> obs(static_cast<std::size_t>(m)),
      est(static_cast<std::size_t>(m));
  for (const auto &r : rows) {
    obs[static_cast<std::size_t>(r.k)].push_back(r.observed);
    est[static_cast<std::size_t>(r.k)].push_back(r.estimated);
  }
  std::vector<double> out;
  for (int k = 0; k < m; ++k)
    out.push_back(pearson(obs[static_cast<std::size_t>(k)], est[static_cast<std::size_t>(k)]));
  return out;
}

struct ResidualSummary {
  double mean = 0.0;          // signed residual
  double mean_abs = 0.0;
  double max_abs = 0.0;
  double pair_fraction = 0.0; // pairs whose max |residual| over time <= tol
  double cell_fraction = 0.0; // (pair, time) cells with |residual| <= tol
  double tolerance = 0.1;
  std::int64_t pairs = 0;
  std::int64_t cells = 0;
};

/// Residuals |x_i - x_j| - d_ij per (pair, grid point) plus summary
/// statistics. The pair fraction aggregates by each pair's worst month.
inline ResidualSummary summarize_residuals(const std::vector<PairResidual> &rows,
                                           int n, double tolerance = 0.1) {
  ResidualSummary s;
  s.tolerance = tolerance;
  if (rows.empty())
    return s;
  std::vector<double> worst(static_cast<std::size_t>(pair_count(n)), 0.0);
  std::int64_t within = 0;
  for (const auto &r : rows) {
    const double res = r.residual();
    s.mean += res;
    s.mean_abs += std::abs(res);
    s.max_abs = std::max(s.max_abs, std::abs(res));
    if (std::abs(res) <= tolerance)
      ++within;
    auto &w = worst[static_cast<std::size_t>(pair_index(r.i, r.j))];
    w = std::max(w, std::abs(res));
  }
  s.cells = static_cast<std::int64_t>(rows.size());
  s.pairs = static_cast<std::int64_t>(worst.size());
  s.mean /= static_cast<double>(s.cells);
  s.mean_abs /= static_cast<double>(s.cells);
  s.cell_fraction = static_cast<double>(within) / static_cast<double>(s.cells);
  s.pair_fraction =
      static_cast<double>(std::count_if(worst.begin(), worst.end(),
                                        [&](double w) { return w <= tolerance; })) /
      static_cast<double>(s.pairs);
  return s;
}

} // namespace fmds

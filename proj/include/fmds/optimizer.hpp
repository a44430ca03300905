#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "fmds/basis.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/dissim.hpp"
#include "fmds/error.hpp"

namespace fmds {

/// Hyperparameters of the pairwise Adam fit.
struct FitConfig {
  double alpha = 0.001;
  double gamma1 = 0.9;
  double gamma2 = 0.999;
  double e = 1e-8;          // added to sqrt(v_hat) elementwise
  double epsilon = 0.00075; // Frobenius threshold on coefficient change
  int max_sweeps = 50;
  int pair_step_cap = 10000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(alpha > 0.0) || !(gamma1 >= 0.0 && gamma1 < 1.0) ||
        !(gamma2 >= 0.0 && gamma2 < 1.0) || !(e > 0.0) || !(epsilon > 0.0) ||
        max_sweeps < 1 || pair_step_cap < 1)
      throw Error(Errc::invalid_config, "invalid FitConfig");
  }
};

/// First and second moments for one (h, j) pair run.
struct AdamPairState {
  Eigen::MatrixXd m_h, v_h, m_j, v_j;
  int step = 0;

  AdamPairState(int p, int q)
      : m_h(Eigen::MatrixXd::Zero(p, q)), v_h(Eigen::MatrixXd::Zero(p, q)),
        m_j(Eigen::MatrixXd::Zero(p, q)), v_j(Eigen::MatrixXd::Zero(p, q)) {}
};

struct FitResult {
  CoeffSet coeffs;
  double initial_F = 0.0;
  double final_F = 0.0;
  int sweeps_used = 0;
  bool converged = false;
  std::vector<double> loss_trace;   // F after each sweep
  std::vector<double> change_trace; // max Frobenius change per sweep
  std::int64_t pair_runs = 0;
  std::int64_t adam_steps = 0;
  std::int64_t pair_cap_hits = 0;
  double wall_seconds = 0.0;
};

namespace detail {

inline void check_shapes(const CoeffSet &coeffs, const DissimilaritySeries &series,
                         const BasisSpec &spec) {
  if (coeffs.n() != series.n())
    throw Error(Errc::dimension_mismatch, "coefficient n differs from series n");
  if (coeffs.q() != spec.q())
    throw Error(Errc::dimension_mismatch, "coefficient q differs from basis q");
  for (double t : series.grid())
    if (!spec.contains(t))
      throw Error(Errc::out_of_domain, "series grid outside basis domain");
}

inline void check_pair(int h, int j, int n) {
  if (h < 0 || j <= h || j >= n)
    throw Error(Errc::out_of_range, "pair indices must satisfy 0 <= h < j < n");
}

} // namespace detail

/// Precomputed basis values on a series grid plus squared targets; shared by
/// the loss, gradient and fitting routines.
///
/// Each beta(t_k) has at most four nonzero entries starting at first_[k], so
/// the pair kernels touch four coefficient columns per grid point.
class PairProblem {
public:
  PairProblem(const DissimilaritySeries &series, const BasisSpec &spec)
      : series_(&series), q_(spec.q()),
        sq_targets_(series.values().cwiseProduct(series.values())) {
    const auto m = series.m();
    first_.resize(static_cast<std::size_t>(m));
    weights_.resize(BasisSpec::order, m);
    for (int k = 0; k < m; ++k) {
      const double t = series.grid()[static_cast<std::size_t>(k)];
      if (!spec.contains(t))
        throw Error(Errc::out_of_domain, "series grid outside basis domain");
      const int s = spec.span_index(t);
      double local[BasisSpec::order];
      detail::nonzero_cubic(spec, s, t, local);
      first_[static_cast<std::size_t>(k)] = s - (BasisSpec::order - 1);
      for (int r = 0; r < BasisSpec::order; ++r)
        weights_(r, k) = local[r];
    }
  }

  int n() const noexcept { return series_->n(); }
  int m() const noexcept { return series_->m(); }
  int q() const noexcept { return q_; }

  auto sq_targets(int h, int j) const { return sq_targets_.row(pair_index(h, j)); }

  /// Column k holds diff * beta(t_k).
  void project(const Eigen::MatrixXd &diff, Eigen::MatrixXd &delta) const {
    const auto p = diff.rows();
    delta.resize(p, m());
    for (int k = 0; k < m(); ++k) {
      const int first = first_[static_cast<std::size_t>(k)];
      for (Eigen::Index r = 0; r < p; ++r) {
        double acc = 0.0;
        for (int c = 0; c < BasisSpec::order; ++c)
          acc += diff(r, first + c) * weights_(c, k);
        delta(r, k) = acc;
      }
    }
  }

  /// f(C_h, C_j) for the pair's coefficient difference.
  double loss(const Eigen::MatrixXd &diff, int h, int j) const {
    Eigen::MatrixXd delta;
    project(diff, delta);
    return (sq_targets(h, j) - delta.colwise().squaredNorm()).squaredNorm();
  }

  /// d f / d C_h; the gradient for C_j is its negation.
  void gradient(const Eigen::MatrixXd &diff, int h, int j, Eigen::MatrixXd &delta,
                Eigen::RowVectorXd &resid, Eigen::MatrixXd &grad_h) const {
    project(diff, delta);
    const auto p = diff.rows();
    const auto targets = sq_targets(h, j);
    resid.resize(m());
    grad_h.setZero(p, diff.cols());
    for (int k = 0; k < m(); ++k) {
      const double r = targets(k) - delta.col(k).squaredNorm();
      resid(k) = r;
      const int first = first_[static_cast<std::size_t>(k)];
      for (int c = 0; c < BasisSpec::order; ++c) {
        const double w = -4.0 * r * weights_(c, k);
        for (Eigen::Index row = 0; row < p; ++row)
          grad_h(row, first + c) += w * delta(row, k);
      }
    }
  }

private:
  const DissimilaritySeries *series_;
  int q_;
  std::vector<int> first_;
  Eigen::Matrix<double, BasisSpec::order, Eigen::Dynamic> weights_;
  Eigen::MatrixXd sq_targets_;
};

/// Sum over i<j and k of [d_ij^2(t_k) - |C_i beta(t_k) - C_j beta(t_k)|^2]^2.
inline double target_F(const CoeffSet &coeffs, const DissimilaritySeries &series,
                       const BasisSpec &spec) {
  detail::check_shapes(coeffs, series, spec);
  const Eigen::MatrixXd basis_t = basis_matrix(spec, series.grid()).transpose();
  std::vector<Eigen::MatrixXd> paths;
  paths.reserve(static_cast<std::size_t>(coeffs.n()));
  for (const auto &c : coeffs)
    paths.push_back(c * basis_t);
  double total = 0.0;
  for (int j = 1; j < coeffs.n(); ++j)
    for (int i = 0; i < j; ++i) {
      const Eigen::RowVectorXd d2 = series.pair_row(i, j).array().square();
      const Eigen::RowVectorXd model =
          (paths[static_cast<std::size_t>(i)] - paths[static_cast<std::size_t>(j)])
              .colwise()
              .squaredNorm();
      total += (d2 - model).squaredNorm();
    }
  return total;
}

inline double pair_loss(int h, int j, const CoeffSet &coeffs,
                        const DissimilaritySeries &series, const BasisSpec &spec) {
  detail::check_shapes(coeffs, series, spec);
  detail::check_pair(h, j, coeffs.n());
  return PairProblem(series, spec).loss(coeffs[h] - coeffs[j], h, j);
}

/// (d f / d C_h, d f / d C_j); the second is exactly the negation of the first.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
pair_gradients(int h, int j, const CoeffSet &coeffs,
               const DissimilaritySeries &series, const BasisSpec &spec) {
  detail::check_shapes(coeffs, series, spec);
  detail::check_pair(h, j, coeffs.n());
  const PairProblem problem(series, spec);
  Eigen::MatrixXd delta;
  Eigen::RowVectorXd resid;
  Eigen::MatrixXd grad_h;
  problem.gradient(coeffs[h] - coeffs[j], h, j, delta, resid, grad_h);
  Eigen::MatrixXd grad_j = -grad_h;
  return {std::move(grad_h), std::move(grad_j)};
}

/// One bias-corrected Adam update of C_h and C_j. Returns the Frobenius norms
/// of the two parameter changes.
inline std::pair<double, double>
adam_pair_step(AdamPairState &state, const Eigen::MatrixXd &grad_h,
               const Eigen::MatrixXd &grad_j, const FitConfig &config,
               Eigen::MatrixXd &c_h, Eigen::MatrixXd &c_j) {
  const double g1 = config.gamma1;
  const double g2 = config.gamma2;
  state.m_h = g1 * state.m_h + (1.0 - g1) * grad_h;
  state.m_j = g1 * state.m_j + (1.0 - g1) * grad_j;
  state.v_h = g2 * state.v_h + (1.0 - g2) * grad_h.cwiseProduct(grad_h);
  state.v_j = g2 * state.v_j + (1.0 - g2) * grad_j.cwiseProduct(grad_j);

  const double power = static_cast<double>(state.step + 1);
  const double bias1 = 1.0 - std::pow(g1, power);
  const double bias2 = 1.0 - std::pow(g2, power);

  double change_h = 0.0;
  double change_j = 0.0;
  for (Eigen::Index idx = 0; idx < c_h.size(); ++idx) {
    const double step_h = config.alpha * (state.m_h(idx) / bias1) /
                          (std::sqrt(state.v_h(idx) / bias2) + config.e);
    const double step_j = config.alpha * (state.m_j(idx) / bias1) /
                          (std::sqrt(state.v_j(idx) / bias2) + config.e);
    c_h(idx) -= step_h;
    c_j(idx) -= step_j;
    change_h += step_h * step_h;
    change_j += step_j * step_j;
  }
  ++state.step;
  return {std::sqrt(change_h), std::sqrt(change_j)};
}

namespace detail {

struct PairRunStats {
  int steps = 0;
  bool hit_cap = false;
};

// Inner loop for one (h, j): fresh moments, iterate until either
// coefficient's change drops below epsilon.
inline PairRunStats run_pair(const PairProblem &problem, int h, int j,
                             const FitConfig &config, CoeffSet &coeffs) {
  Eigen::MatrixXd &c_h = coeffs[h];
  Eigen::MatrixXd &c_j = coeffs[j];
  AdamPairState state(static_cast<int>(c_h.rows()), static_cast<int>(c_h.cols()));
  Eigen::MatrixXd delta, grad_h, grad_j, diff;
  Eigen::RowVectorXd resid;
  PairRunStats stats;
  while (true) {
    diff.noalias() = c_h - c_j;
    problem.gradient(diff, h, j, delta, resid, grad_h);
    grad_j.noalias() = -grad_h;
    const auto [change_h, change_j] =
        adam_pair_step(state, grad_h, grad_j, config, c_h, c_j);
    ++stats.steps;
    if (change_h < config.epsilon || change_j < config.epsilon)
      break;
    if (stats.steps >= config.pair_step_cap) {
      stats.hit_cap = true;
      break;
    }
  }
  return stats;
}

} // namespace detail

/// F relative to the sum of d^4 below which a start counts as an exact fit.
inline constexpr double exact_fit_tolerance = 1e-16;

/// Pairwise Adam fit of the coefficient matrices.
///
/// Each draw samples h uniformly from {0, ..., n-2} and runs the pair loop for
/// j = h+1, ..., n-1 in order. A sweep ends once every h has been drawn at
/// least once; the fit stops when no C_i moved by epsilon or more (Frobenius)
/// over the sweep, or after max_sweeps.
inline FitResult fit(const DissimilaritySeries &series, const BasisSpec &spec,
                     int p, const FitConfig &config, const CoeffSet &init) {
  config.validate();
  detail::check_shapes(init, series, spec);
  if (init.p() != p)
    throw Error(Errc::dimension_mismatch, "initial coefficients have wrong p");

  const auto started = std::chrono::steady_clock::now();
  const PairProblem problem(series, spec);
  const int n = series.n();

  FitResult result;
  result.coeffs = init;
  result.initial_F = target_F(init, series, spec);

  // F is a sum of squares, so a start at F = 0 (to rounding) is already the
  // global minimum. Adam would otherwise blow rounding-level gradients up to
  // full-size steps.
  const double scale = series.values().array().pow(4).sum();
  if (result.initial_F <= exact_fit_tolerance * scale) {
    result.converged = true;
    result.final_F = result.initial_F;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> draw_h(0, n - 2);

  for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
    const CoeffSet before = result.coeffs;
    std::vector<bool> drawn(static_cast<std::size_t>(n - 1), false);
    int remaining = n - 1;
    while (remaining > 0) {
      const int h = draw_h(rng);
      if (!drawn[static_cast<std::size_t>(h)]) {
        drawn[static_cast<std::size_t>(h)] = true;
        --remaining;
      }
      for (int j = h + 1; j < n; ++j) {
        const auto stats = detail::run_pair(problem, h, j, config, result.coeffs);
        ++result.pair_runs;
        result.adam_steps += stats.steps;
        if (stats.hit_cap)
          ++result.pair_cap_hits;
      }
    }

    double change = 0.0;
    for (int i = 0; i < n; ++i)
      change = std::max(change, (result.coeffs[i] - before[i]).norm());
    result.change_trace.push_back(change);
    result.loss_trace.push_back(target_F(result.coeffs, series, spec));
    ++result.sweeps_used;
    if (change < config.epsilon) {
      result.converged = true;
      break;
    }
  }

  result.final_F = result.loss_trace.back();
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

} // namespace fmds

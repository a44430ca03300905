#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "fmds/basis.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/error.hpp"

namespace fmds {

struct CurvilinearConfig {
  double rho1 = 1e-4;   // sufficient decrease
  double delta = 0.5;   // backtracking shrink factor
  double eta = 0.85;    // weight of the nonmonotone reference average
  double epsilon = 1e-5; // stop when |grad|_F <= epsilon
  double tau0 = 1e-3;
  double tau_min = 1e-20;
  double tau_max = 1e20;
  int max_iters = 1000;
  int max_backtracks = 60;
  bool try_reflection = true;
  std::uint64_t seed = 1;

  void validate() const {
    auto unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!unit(rho1) || !unit(delta) || !unit(eta) || !unit(epsilon) ||
        !(tau_min > 0.0) || !(tau_min <= tau0) || !(tau0 <= tau_max) ||
        max_iters < 1 || max_backtracks < 1)
      throw Error(Errc::invalid_config, "invalid CurvilinearConfig");
  }
};

struct AlignmentStep {
  double objective;
  double grad_norm;
  double tau;
};

struct AlignmentResult {
  Eigen::MatrixXd gamma_hat;
  double objective = 0.0;
  double grad_norm = 0.0;
  int iters = 0;
  bool converged = false;
  int det_sign = 1; // determinant component of the winning start
  double initial_objective = 0.0;
  double identity_objective = 0.0;
  std::vector<AlignmentStep> trace;
  double max_feasibility_error = 0.0; // max |G^T G - I|_F over all iterates
};

namespace detail {

inline void check_alignment_inputs(const Eigen::MatrixXd &gamma,
                                   const CoeffSet &fitted, const CoeffSet &truth,
                                   const BasisSpec &spec, int m) {
  if (!fitted.same_shape(truth))
    throw Error(Errc::dimension_mismatch, "fitted and truth differ in shape");
  if (gamma.rows() != fitted.p() || gamma.cols() != fitted.p())
    throw Error(Errc::dimension_mismatch, "gamma must be p x p");
  if (fitted.q() != spec.q())
    throw Error(Errc::dimension_mismatch, "coefficient q differs from basis q");
  if (m < 2)
    throw Error(Errc::out_of_range, "alignment needs m >= 2");
  if (!spec.contains(1.0) || !spec.contains(static_cast<double>(m)))
    throw Error(Errc::out_of_domain, "basis domain must cover [1, m]");
}

// Trapezoid nodes t_k = 1 + (k-1)/2, k = 1..2m-1, with weights 1/4 at the ends
// and 1/2 inside.
inline double half_step_node(int k) { return 1.0 + 0.5 * (k - 1); }
inline double half_step_weight(int k, int m) {
  return (k == 1 || k == 2 * m - 1) ? 0.25 : 0.5;
}

} // namespace detail

/// Trapezoid-rule alignment objective between Gamma * fitted and truth.
inline double objective_G(const Eigen::MatrixXd &gamma, const CoeffSet &fitted,
                          const CoeffSet &truth, const BasisSpec &spec, int m) {
  detail::check_alignment_inputs(gamma, fitted, truth, spec, m);
  double total = 0.0;
  for (int k = 1; k <= 2 * m - 1; ++k) {
    const Eigen::VectorXd beta = eval_basis(spec, detail::half_step_node(k));
    const double w = detail::half_step_weight(k, m);
    for (int i = 0; i < fitted.n(); ++i)
      total += w * (gamma * (fitted[i] * beta) - truth[i] * beta).squaredNorm();
  }
  return total;
}

/// Euclidean gradient of objective_G in Gamma (valid off the orthogonal group).
inline Eigen::MatrixXd gradient_G(const Eigen::MatrixXd &gamma,
                                  const CoeffSet &fitted, const CoeffSet &truth,
                                  const BasisSpec &spec, int m) {
  detail::check_alignment_inputs(gamma, fitted, truth, spec, m);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(gamma.rows(), gamma.cols());
  for (int k = 1; k <= 2 * m - 1; ++k) {
    const Eigen::VectorXd beta = eval_basis(spec, detail::half_step_node(k));
    const double w = detail::half_step_weight(k, m);
    for (int i = 0; i < fitted.n(); ++i) {
      const Eigen::VectorXd a = fitted[i] * beta;
      grad += (2.0 * w) * (gamma * a - truth[i] * beta) * a.transpose();
    }
  }
  return grad;
}

/// The objective is quadratic in Gamma, so it reduces to three weighted
/// moments of the sampled paths:
///   G(Gamma) = tr(Gamma Saa Gamma^T) - 2 tr(Gamma^T Sba) + cbb.
class AlignmentProblem {
public:
  AlignmentProblem(const CoeffSet &fitted, const CoeffSet &truth,
                   const BasisSpec &spec, int m) {
    const int p = fitted.p();
    detail::check_alignment_inputs(Eigen::MatrixXd::Identity(p, p), fitted, truth,
                                   spec, m);
    saa_ = Eigen::MatrixXd::Zero(p, p);
    sba_ = Eigen::MatrixXd::Zero(p, p);
    for (int k = 1; k <= 2 * m - 1; ++k) {
      const Eigen::VectorXd beta = eval_basis(spec, detail::half_step_node(k));
      const double w = detail::half_step_weight(k, m);
      for (int i = 0; i < fitted.n(); ++i) {
        const Eigen::VectorXd a = fitted[i] * beta;
        const Eigen::VectorXd b = truth[i] * beta;
        saa_.noalias() += w * a * a.transpose();
        sba_.noalias() += w * b * a.transpose();
        cbb_ += w * b.squaredNorm();
      }
    }
  }

  int p() const noexcept { return static_cast<int>(saa_.rows()); }

  double objective(const Eigen::MatrixXd &gamma) const {
    const double value = (gamma * saa_ * gamma.transpose()).trace() -
                         2.0 * (gamma.transpose() * sba_).trace() + cbb_;
    return std::max(0.0, value);
  }

  Eigen::MatrixXd gradient(const Eigen::MatrixXd &gamma) const {
    return 2.0 * (gamma * saa_ - sba_);
  }

  const Eigen::MatrixXd &cross_moment() const noexcept { return sba_; }

private:
  Eigen::MatrixXd saa_;
  Eigen::MatrixXd sba_;
  double cbb_ = 0.0;
};

inline double orthogonality_error(const Eigen::MatrixXd &gamma) {
  return (gamma.transpose() * gamma -
          Eigen::MatrixXd::Identity(gamma.cols(), gamma.cols()))
      .norm();
}

struct RiemannianGradient {
  Eigen::MatrixXd nabla; // G - Gamma G^T Gamma
  Eigen::MatrixXd a;     // G Gamma^T - Gamma G^T, skew-symmetric
};

inline RiemannianGradient riemannian_grad(const Eigen::MatrixXd &gamma,
                                          const Eigen::MatrixXd &euclid_grad) {
  if (gamma.rows() != gamma.cols() || euclid_grad.rows() != gamma.rows() ||
      euclid_grad.cols() != gamma.cols())
    throw Error(Errc::dimension_mismatch, "gamma and gradient must be p x p");
  if (orthogonality_error(gamma) > 1e-8)
    throw Error(Errc::non_orthogonal, "gamma is not orthogonal");
  return {euclid_grad - gamma * euclid_grad.transpose() * gamma,
          euclid_grad * gamma.transpose() - gamma * euclid_grad.transpose()};
}

/// Cayley curve point (I + tau/2 A)^{-1} (I - tau/2 A) Gamma.
inline Eigen::MatrixXd cayley_step(const Eigen::MatrixXd &gamma,
                                   const Eigen::MatrixXd &a, double tau) {
  const auto p = gamma.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(p, p);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(id + (0.5 * tau) * a);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    throw Error(Errc::singular_system, "I + tau/2 A is numerically singular");
  return lu.solve((id - (0.5 * tau) * a) * gamma);
}

enum class BBType { type1, type2 };

/// Barzilai-Borwein step from S = Gamma_k - Gamma_{k-1} and
/// Y = grad_k - grad_{k-1}, clamped to [tau_min, tau_max]. A zero denominator
/// falls back to tau0.
inline double bb_step(const Eigen::MatrixXd &s, const Eigen::MatrixXd &y,
                      BBType type, double tau0 = 1e-3, double tau_min = 1e-20,
                      double tau_max = 1e20) {
  const double sy = std::abs((s.transpose() * y).trace());
  double tau = tau0;
  if (type == BBType::type1) {
    if (sy > 0.0)
      tau = (s.transpose() * s).trace() / sy;
  } else {
    const double yy = (y.transpose() * y).trace();
    if (yy > 0.0)
      tau = sy / yy;
  }
  if (!std::isfinite(tau))
    tau = tau0;
  return std::clamp(tau, tau_min, tau_max);
}

/// Orthonormalize the columns of a square matrix by modified Gram-Schmidt.
inline Eigen::MatrixXd gram_schmidt(Eigen::MatrixXd q) {
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    for (Eigen::Index prev = 0; prev < c; ++prev)
      q.col(c) -= q.col(prev).dot(q.col(c)) * q.col(prev);
    const double norm = q.col(c).norm();
    if (norm <= 1e-12)
      throw Error(Errc::singular_system, "Gram-Schmidt on rank-deficient matrix");
    q.col(c) /= norm;
  }
  return q;
}

/// Seeded standard-Gaussian start, orthonormalized; det_sign selects the
/// component by flipping the last column when needed.
inline Eigen::MatrixXd random_orthogonal(int p, std::uint64_t seed, int det_sign) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd draw(p, p);
  for (Eigen::Index i = 0; i < draw.size(); ++i)
    draw(i) = normal(rng);
  Eigen::MatrixXd q = gram_schmidt(draw);
  if ((q.determinant() > 0.0) != (det_sign > 0))
    q.col(p - 1) *= -1.0;
  return q;
}

/// Curvilinear search with alternating Barzilai-Borwein steps and a
/// nonmonotone (Zhang-Hager) Armijo backtracking rule along the Cayley curve.
/// Returns the best iterate seen.
inline AlignmentResult curvilinear_search(const AlignmentProblem &problem,
                                          Eigen::MatrixXd gamma,
                                          const CurvilinearConfig &config) {
  AlignmentResult out;
  Eigen::MatrixXd euclid = problem.gradient(gamma);
  auto rg = riemannian_grad(gamma, euclid);
  double value = problem.objective(gamma);
  double grad_norm = rg.nabla.norm();

  out.initial_objective = value;
  out.gamma_hat = gamma;
  out.objective = value;
  out.grad_norm = grad_norm;
  out.max_feasibility_error = orthogonality_error(gamma);
  out.trace.push_back({value, grad_norm, 0.0});

  double ref = value; // nonmonotone reference C_k
  double weight = 1.0; // Q_k
  double tau = config.tau0;

  for (int iter = 0; iter < config.max_iters; ++iter) {
    if (grad_norm <= config.epsilon) {
      out.converged = true;
      break;
    }
    const double slope = -0.5 * rg.a.squaredNorm();
    Eigen::MatrixXd trial;
    double trial_value = std::numeric_limits<double>::infinity();
    for (int back = 0; back < config.max_backtracks; ++back) {
      try {
        trial = cayley_step(gamma, rg.a, tau);
        trial_value = problem.objective(trial);
        if (trial_value <= ref + config.rho1 * tau * slope)
          break;
      } catch (const Error &) {
        trial_value = std::numeric_limits<double>::infinity();
      }
      tau *= config.delta;
    }
    if (!std::isfinite(trial_value))
      break;

    Eigen::MatrixXd next_euclid = problem.gradient(trial);
    auto next_rg = riemannian_grad(trial, next_euclid);
    const Eigen::MatrixXd s = trial - gamma;
    const Eigen::MatrixXd y = next_rg.nabla - rg.nabla;

    const double next_weight = config.eta * weight + 1.0;
    ref = (config.eta * weight * ref + trial_value) / next_weight;
    weight = next_weight;

    gamma = std::move(trial);
    rg = std::move(next_rg);
    value = trial_value;
    grad_norm = rg.nabla.norm();
    out.iters = iter + 1;
    out.max_feasibility_error =
        std::max(out.max_feasibility_error, orthogonality_error(gamma));
    out.trace.push_back({value, grad_norm, tau});
    if (value < out.objective) {
      out.gamma_hat = gamma;
      out.objective = value;
      out.grad_norm = grad_norm;
    }

    tau = bb_step(s, y, (iter % 2 == 0) ? BBType::type1 : BBType::type2,
                  config.tau0, config.tau_min, config.tau_max);
  }
  if (grad_norm <= config.epsilon)
    out.converged = true;
  return out;
}

/// Orthogonal Gamma minimizing the alignment objective. Runs from a seeded
/// random rotation, from its reflection (when enabled) and from the identity,
/// and keeps the best result.
inline AlignmentResult align(const CoeffSet &fitted, const CoeffSet &truth,
                             const BasisSpec &spec, int m,
                             const CurvilinearConfig &config = {}) {
  config.validate();
  const AlignmentProblem problem(fitted, truth, spec, m);
  const int p = problem.p();

  std::vector<std::pair<Eigen::MatrixXd, int>> starts;
  starts.emplace_back(random_orthogonal(p, config.seed, +1), +1);
  if (config.try_reflection)
    starts.emplace_back(random_orthogonal(p, config.seed, -1), -1);
  starts.emplace_back(Eigen::MatrixXd::Identity(p, p), +1);

  AlignmentResult best;
  bool have = false;
  double feasibility = 0.0;
  for (auto &[start, sign] : starts) {
    AlignmentResult run = curvilinear_search(problem, start, config);
    run.det_sign = sign;
    feasibility = std::max(feasibility, run.max_feasibility_error);
    if (!have || run.objective < best.objective) {
      best = std::move(run);
      have = true;
    }
  }
  best.initial_objective = problem.objective(starts.front().first);
  best.identity_objective = problem.objective(Eigen::MatrixXd::Identity(p, p));
  best.max_feasibility_error = feasibility;
  return best;
}

} // namespace fmds

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "fmds/basis.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/dissim.hpp"
#include "fmds/error.hpp"

namespace fmds {

/// Classical (Torgerson) scaling of an n x n dissimilarity matrix into p
/// dimensions. Returns n x p coordinates with zero column means.
///
/// Negative eigenvalues of the double-centered matrix are clamped to zero.
/// Each eigenvector's largest-magnitude entry is made positive so the result
/// is deterministic.
inline Eigen::MatrixXd classical_mds(const Eigen::MatrixXd &d, int p) {
  const auto n = d.rows();
  if (d.cols() != n)
    throw Error(Errc::non_symmetric, "dissimilarity matrix must be square");
  if (p < 1 || p >= n)
    throw Error(Errc::out_of_range, "embedding dimension must satisfy 1 <= p < n");
  const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
  if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw Error(Errc::non_symmetric, "dissimilarity matrix is not symmetric");
  if (d.diagonal().cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw Error(Errc::non_symmetric, "dissimilarity matrix needs a zero diagonal");
  if (d.minCoeff() < 0.0)
    throw Error(Errc::out_of_range, "dissimilarities must be nonnegative");

  const Eigen::MatrixXd sq = d.cwiseProduct(d);
  // -1/2 J (D o D) J without forming J.
  const Eigen::VectorXd row_mean = sq.rowwise().mean();
  const Eigen::RowVectorXd col_mean = sq.colwise().mean();
  const double grand = sq.mean();
  Eigen::MatrixXd b = sq;
  b.colwise() -= row_mean;
  b.rowwise() -= col_mean;
  b.array() += grand;
  b *= -0.5;
  b = 0.5 * (b + b.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);
  Eigen::MatrixXd x(n, p);
  for (int c = 0; c < p; ++c) {
    const auto idx = n - 1 - c; // eigenvalues ascend
    Eigen::VectorXd v = eig.eigenvectors().col(idx);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0)
      v = -v;
    x.col(c) = v * std::sqrt(std::max(0.0, eig.eigenvalues()(idx)));
  }
  x.rowwise() -= x.colwise().mean();
  return x;
}

/// Orthogonal R minimizing |source R - target|_F (both n x p).
inline Eigen::MatrixXd procrustes_rotation(const Eigen::MatrixXd &source,
                                           const Eigen::MatrixXd &target) {
  if (source.rows() != target.rows() || source.cols() != target.cols())
    throw Error(Errc::dimension_mismatch, "procrustes inputs differ in shape");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(source.transpose() * target,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

enum class InitStrategy { mean_matrix, per_timepoint };

/// Element-wise time average of D(t_k).
inline Eigen::MatrixXd mean_dissimilarity(const DissimilaritySeries &series) {
  Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(series.n(), series.n());
  for (int k = 0; k < series.m(); ++k)
    avg += series.matrix_at(k);
  return avg / series.m();
}

/// Starting coefficients from classical scaling.
///
/// mean_matrix: scale the time-averaged matrix and copy each point into every
/// column of C_i, giving constant curves.
/// per_timepoint: embed every D(t_k), chain-align each solution onto the
/// previous one, then least-squares fit C_i on beta(t_k). An underdetermined
/// fit (m < q) uses the minimum-norm solution.
inline CoeffSet init_coeffs(const DissimilaritySeries &series,
                            const BasisSpec &spec, int p,
                            InitStrategy strategy = InitStrategy::mean_matrix) {
  if (p < 1)
    throw Error(Errc::out_of_range, "embedding dimension must be positive");
  for (double t : series.grid())
    if (!spec.contains(t))
      throw Error(Errc::out_of_domain, "series grid outside basis domain");

  const int n = series.n();
  const int q = spec.q();
  CoeffSet out(n, p, q);

  if (strategy == InitStrategy::mean_matrix) {
    const Eigen::MatrixXd x = classical_mds(mean_dissimilarity(series), p);
    for (int i = 0; i < n; ++i)
      out[i] = x.row(i).transpose().replicate(1, q);
    return out;
  }

  const int m = series.m();
  std::vector<Eigen::MatrixXd> frames(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k)
    frames[static_cast<std::size_t>(k)] = classical_mds(series.matrix_at(k), p);
  for (std::size_t k = 1; k < frames.size(); ++k)
    frames[k] = frames[k] * procrustes_rotation(frames[k], frames[k - 1]);

  const Eigen::MatrixXd basis = basis_matrix(spec, series.grid()); // m x q
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(basis);
  Eigen::MatrixXd points(m, p);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < m; ++k)
      points.row(k) = frames[static_cast<std::size_t>(k)].row(i);
    out[i] = cod.solve(points).transpose();
  }
  return out;
}

} // namespace fmds

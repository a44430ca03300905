#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fmds/basis.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/error.hpp"

namespace fmds {

// Unordered pairs are stored in the column-by-column upper-triangle order
// (0,1), (0,2), (1,2), (0,3), (1,3), (2,3), ... which is also the row order of
// the super dissimilarity matrix.

inline std::int64_t pair_count(std::int64_t n) { return n * (n - 1) / 2; }

/// Zero-based pair slot of (i, j), i < j.
inline std::int64_t pair_index(std::int64_t i, std::int64_t j) {
  return j * (j - 1) / 2 + i;
}

struct Pair {
  int i;
  int j;
  friend bool operator==(const Pair &, const Pair &) = default;
};

inline Pair pair_at(std::int64_t slot) {
  auto j = static_cast<std::int64_t>(
      std::floor((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(slot))) / 2.0));
  // Correct for floating-point rounding near triangular numbers.
  while (j * (j - 1) / 2 > slot)
    --j;
  while ((j + 1) * j / 2 <= slot)
    ++j;
  return {static_cast<int>(slot - j * (j - 1) / 2), static_cast<int>(j)};
}

/// Observed dissimilarities d_ij(t_k) for all unordered pairs over a grid.
class DissimilaritySeries {
public:
  DissimilaritySeries() = default;

  /// `values` has one row per pair (upper-triangle order) and one column per
  /// grid point.
  DissimilaritySeries(int n, std::vector<double> grid, Eigen::MatrixXd values,
                      std::vector<std::string> labels = {})
      : n_(n), grid_(std::move(grid)), values_(std::move(values)),
        labels_(std::move(labels)) {
    if (n_ < 2)
      throw Error(Errc::dimension_mismatch, "series needs at least two objects");
    if (grid_.empty())
      throw Error(Errc::dimension_mismatch, "series grid is empty");
    if (values_.rows() != pair_count(n_) ||
        values_.cols() != static_cast<Eigen::Index>(grid_.size()))
      throw Error(Errc::dimension_mismatch, "series values have wrong shape");
    for (std::size_t k = 1; k < grid_.size(); ++k)
      if (!(grid_[k] > grid_[k - 1]))
        throw Error(Errc::invalid_domain, "series grid must be strictly increasing");
    if (!values_.allFinite() || (values_.size() > 0 && values_.minCoeff() < 0.0))
      throw Error(Errc::out_of_range, "dissimilarities must be finite and nonnegative");
    if (!labels_.empty() && static_cast<int>(labels_.size()) != n_)
      throw Error(Errc::dimension_mismatch, "label count differs from n");
  }

  int n() const noexcept { return n_; }
  int m() const noexcept { return static_cast<int>(grid_.size()); }
  std::span<const double> grid() const noexcept { return grid_; }
  const std::vector<std::string> &labels() const noexcept { return labels_; }
  const Eigen::MatrixXd &values() const noexcept { return values_; }

  /// d_ij(t_k) with symmetric lookup and zero diagonal.
  double operator()(int i, int j, int k) const {
    if (i == j)
      return 0.0;
    if (i > j)
      std::swap(i, j);
    return values_(pair_index(i, j), k);
  }

  auto pair_row(int i, int j) const { return values_.row(pair_index(i, j)); }

  /// Full n x n matrix D(t_k).
  Eigen::MatrixXd matrix_at(int k) const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_, n_);
    for (int j = 1; j < n_; ++j)
      for (int i = 0; i < j; ++i)
        d(i, j) = d(j, i) = values_(pair_index(i, j), k);
    return d;
  }

  std::string label(int i) const {
    return labels_.empty() ? std::to_string(i + 1)
                           : labels_[static_cast<std::size_t>(i)];
  }

private:
  int n_ = 0;
  std::vector<double> grid_;
  Eigen::MatrixXd values_;
  std::vector<std::string> labels_;
};

/// d_ij(t_k) = |C_i beta(t_k) - C_j beta(t_k)| for ground-truth coefficients.
inline DissimilaritySeries euclidean_series(const CoeffSet &truth,
                                            const BasisSpec &spec,
                                            std::vector<double> grid) {
  if (truth.q() != spec.q())
    throw Error(Errc::dimension_mismatch, "coefficient q differs from basis q");
  const int n = truth.n();
  const Eigen::MatrixXd basis = basis_matrix(spec, grid);
  const auto m = basis.rows();

  std::vector<Eigen::MatrixXd> paths;
  paths.reserve(static_cast<std::size_t>(n));
  for (const auto &c : truth)
    paths.push_back(c * basis.transpose()); // p x m

  Eigen::MatrixXd values(pair_count(n), m);
  for (int j = 1; j < n; ++j)
    for (int i = 0; i < j; ++i)
      values.row(pair_index(i, j)) =
          (paths[static_cast<std::size_t>(i)] - paths[static_cast<std::size_t>(j)])
              .colwise()
              .norm();
  return {n, std::move(grid), std::move(values)};
}

/// Daily closing prices grouped by month. closes[k] is tickers x r_k.
struct PricePanel {
  std::vector<std::string> tickers;
  std::vector<std::string> months; // YYYY-MM keys, ascending
  std::vector<Eigen::MatrixXd> closes;
};

/// Pearson correlation dissimilarities d_ij(t) = (1 - R_ij(t)) / 2 per month.
/// The grid is the month ordinal 1..M.
inline DissimilaritySeries correlation_dissim(const PricePanel &panel) {
  const int n = static_cast<int>(panel.tickers.size());
  const int months = static_cast<int>(panel.closes.size());
  if (n < 2)
    throw Error(Errc::insufficient_data, "need at least two tickers");
  if (months < 1)
    throw Error(Errc::insufficient_data, "need at least one month");

  Eigen::MatrixXd values(pair_count(n), months);
  std::vector<double> grid(static_cast<std::size_t>(months));
  for (int k = 0; k < months; ++k) {
    grid[static_cast<std::size_t>(k)] = k + 1;
    const Eigen::MatrixXd &y = panel.closes[static_cast<std::size_t>(k)];
    if (y.rows() != n)
      throw Error(Errc::dimension_mismatch, "month has wrong ticker count");
    if (y.cols() < 2)
      throw Error(Errc::insufficient_data,
                  "month " + std::to_string(k + 1) + " has fewer than two trading days");
    const Eigen::MatrixXd centered = y.colwise() - y.rowwise().mean();
    const Eigen::VectorXd norms = centered.rowwise().norm();
    for (int i = 0; i < n; ++i) {
      // Relative test: constant series leave only rounding noise after centering.
      if (norms(i) <= 1e-12 * y.row(i).cwiseAbs().maxCoeff())
        throw Error(Errc::degenerate_series,
                    "ticker " + panel.tickers[static_cast<std::size_t>(i)] +
                        " has constant prices in month " + std::to_string(k + 1));
    }
    const Eigen::MatrixXd gram = centered * centered.transpose();
    for (int j = 1; j < n; ++j)
      for (int i = 0; i < j; ++i) {
        const double r =
            std::clamp(gram(i, j) / (norms(i) * norms(j)), -1.0, 1.0);
        values(pair_index(i, j), k) = (1.0 - r) / 2.0;
      }
  }
  return {n, std::move(grid), std::move(values), panel.tickers};
}

/// Pairs x time table; row order is the upper-triangle order above.
inline Eigen::MatrixXd build_super_matrix(const DissimilaritySeries &series) {
  return series.values();
}

inline DissimilaritySeries series_from_super_matrix(int n,
                                                    std::vector<double> grid,
                                                    const Eigen::MatrixXd &table) {
  return {n, std::move(grid), table};
}

} // namespace fmds

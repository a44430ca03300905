#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fmds/error.hpp"

namespace fmds {

/// Clamped cubic B-spline family on [domain_lo, domain_hi] with
/// `interior_knots` equally spaced interior breakpoints.
///
/// The knot vector repeats each boundary knot four times, so the family has
/// q = interior_knots + 4 members and forms a nonnegative partition of unity
/// on the closed domain.
class BasisSpec {
public:
  static constexpr int order = 4;

  BasisSpec(int interior_knots, double domain_lo, double domain_hi)
      : lo_(domain_lo), hi_(domain_hi), interior_(interior_knots) {
    if (!(domain_lo < domain_hi) || !std::isfinite(domain_lo) ||
        !std::isfinite(domain_hi))
      throw Error(Errc::invalid_domain, "basis domain requires lo < hi");
    if (interior_knots < 1)
      throw Error(Errc::invalid_count, "at least one interior knot required");

    knots_.reserve(static_cast<std::size_t>(interior_knots + 2 * order));
    for (int i = 0; i < order; ++i)
      knots_.push_back(lo_);
    const double width = (hi_ - lo_) / (interior_knots + 1);
    for (int i = 1; i <= interior_knots; ++i)
      knots_.push_back(lo_ + i * width);
    for (int i = 0; i < order; ++i)
      knots_.push_back(hi_);
  }

  double domain_lo() const noexcept { return lo_; }
  double domain_hi() const noexcept { return hi_; }
  int interior_knots() const noexcept { return interior_; }
  int q() const noexcept { return interior_ + order; }
  std::span<const double> knots() const noexcept { return knots_; }

  bool contains(double t) const noexcept { return t >= lo_ && t <= hi_; }

  /// Index s of the knot span [knots[s], knots[s+1]) holding t; the right
  /// endpoint maps to the last nonempty span.
  int span_index(double t) const noexcept {
    const int last = q() - 1;
    if (t >= hi_)
      return last;
    auto it = std::upper_bound(knots_.begin() + order, knots_.begin() + last + 1, t);
    return static_cast<int>(it - knots_.begin()) - 1;
  }

  friend bool operator==(const BasisSpec &, const BasisSpec &) = default;

private:
  double lo_;
  double hi_;
  int interior_;
  std::vector<double> knots_;
};

inline BasisSpec make_basis(int interior_knots, double domain_lo,
                            double domain_hi) {
  return BasisSpec(interior_knots, domain_lo, domain_hi);
}

namespace detail {

// de Boor's triangular recurrence for the four cubic B-splines that are
// nonzero on span s. out[r] holds B_{s-3+r}(t).
inline void nonzero_cubic(const BasisSpec &spec, int s, double t,
                          double (&out)[BasisSpec::order]) {
  const auto knots = spec.knots();
  double left[BasisSpec::order];
  double right[BasisSpec::order];
  out[0] = 1.0;
  for (int j = 1; j < BasisSpec::order; ++j) {
    left[j] = t - knots[s + 1 - j];
    right[j] = knots[s + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

} // namespace detail

/// Weights beta(t) of all q basis functions at t.
inline Eigen::VectorXd eval_basis(const BasisSpec &spec, double t) {
  if (!spec.contains(t))
    throw Error(Errc::out_of_domain, "t = " + std::to_string(t) +
                                         " outside basis domain");
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(spec.q());
  const int s = spec.span_index(t);
  double local[BasisSpec::order];
  detail::nonzero_cubic(spec, s, t, local);
  for (int r = 0; r < BasisSpec::order; ++r)
    beta(s - 3 + r) = local[r];
  return beta;
}

/// Row k holds beta(grid[k])^T.
inline Eigen::MatrixXd basis_matrix(const BasisSpec &spec,
                                    std::span<const double> grid) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), spec.q());
  for (std::size_t k = 0; k < grid.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = eval_basis(spec, grid[k]).transpose();
  return out;
}

} // namespace fmds

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

#include "fmds/error.hpp"

namespace fmds {

/// n coefficient matrices C_i, each p x q, so that x_i(t) = C_i beta(t).
class CoeffSet {
public:
  CoeffSet() = default;

  CoeffSet(int n, int p, int q) : p_(p), q_(q) {
    if (n < 1 || p < 1 || q < 1)
      throw Error(Errc::dimension_mismatch, "CoeffSet needs n, p, q >= 1");
    mats_.assign(static_cast<std::size_t>(n), Eigen::MatrixXd::Zero(p, q));
  }

  explicit CoeffSet(std::vector<Eigen::MatrixXd> mats) : mats_(std::move(mats)) {
    if (mats_.empty())
      throw Error(Errc::dimension_mismatch, "CoeffSet needs at least one matrix");
    p_ = static_cast<int>(mats_.front().rows());
    q_ = static_cast<int>(mats_.front().cols());
    for (const auto &c : mats_) {
      if (c.rows() != p_ || c.cols() != q_)
        throw Error(Errc::dimension_mismatch, "CoeffSet matrices differ in shape");
      if (!c.allFinite())
        throw Error(Errc::dimension_mismatch, "CoeffSet entries must be finite");
    }
  }

  int n() const noexcept { return static_cast<int>(mats_.size()); }
  int p() const noexcept { return p_; }
  int q() const noexcept { return q_; }

  Eigen::MatrixXd &operator[](int i) { return mats_[static_cast<std::size_t>(i)]; }
  const Eigen::MatrixXd &operator[](int i) const {
    return mats_[static_cast<std::size_t>(i)];
  }

  auto begin() { return mats_.begin(); }
  auto end() { return mats_.end(); }
  auto begin() const { return mats_.begin(); }
  auto end() const { return mats_.end(); }

  /// Position x_i(t) = C_i beta for a precomputed weight vector.
  Eigen::VectorXd position(int i, const Eigen::VectorXd &beta) const {
    return (*this)[i] * beta;
  }

  bool same_shape(const CoeffSet &other) const noexcept {
    return n() == other.n() && p_ == other.p_ && q_ == other.q_;
  }

  friend bool operator==(const CoeffSet &a, const CoeffSet &b) {
    if (!a.same_shape(b))
      return false;
    for (int i = 0; i < a.n(); ++i)
      if (a[i] != b[i])
        return false;
    return true;
  }

private:
  int p_ = 0;
  int q_ = 0;
  std::vector<Eigen::MatrixXd> mats_;
};

} // namespace fmds

#include "mol/simplex.hpp"

#include <limits>
#include <vector>

namespace mol {

namespace {

class Tableau {
 public:
  Tableau(const Matrix& A, const Vector& b) : m_(A.rows()), n_(A.cols()) {
    t_ = Matrix::Zero(m_ + 1, n_ + m_ + 1);
    basis_.resize(static_cast<std::size_t>(m_));
    for (Index i = 0; i < m_; ++i) {
      const double sign = b(i) < 0 ? -1.0 : 1.0;
      t_.row(i).head(n_) = sign * A.row(i);
      t_(i, n_ + i) = 1.0;
      t_(i, rhs()) = sign * b(i);
      basis_[static_cast<std::size_t>(i)] = n_ + i;
    }
  }

  Index rhs() const { return n_ + m_; }
  Index obj() const { return m_; }

  void pivot(Index row, Index col) {
    t_.row(row) /= t_(row, col);
    for (Index i = 0; i <= m_; ++i) {
      if (i == row) continue;
      const double f = t_(i, col);
      if (f != 0.0) t_.row(i) -= f * t_.row(row);
    }
    basis_[static_cast<std::size_t>(row)] = col;
    ++pivots_;
  }

  // Bland's rule over columns [0, ncols). Returns false if unbounded.
  bool optimize(Index ncols, double tol) {
    const Index max_pivots = 50 * (m_ + n_ + 10);
    while (pivots_ < max_pivots) {
      Index enter = -1;
      for (Index j = 0; j < ncols; ++j) {
        if (t_(obj(), j) < -tol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < m_; ++i) {
        if (!active_[static_cast<std::size_t>(i)]) continue;
        const double a = t_(i, enter);
        if (a <= tol) continue;
        const double ratio = t_(i, rhs()) / a;
        if (ratio < best - tol ||
            (ratio <= best + tol && leave >= 0 && basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          best = ratio;
          leave = i;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    throw NumericalError("simplex exceeded its pivot budget");
  }

  Matrix t_;
  std::vector<Index> basis_;
  std::vector<bool> active_;
  Index m_;
  Index n_;
  Index pivots_ = 0;
};

}  // namespace

LpResult solve_standard_lp(const Vector& c, const Matrix& A, const Vector& b, double tol) {
  const Index m = A.rows();
  const Index n = A.cols();
  if (c.size() != n || b.size() != m) throw ShapeError("LP dimensions disagree");

  Tableau tab(A, b);
  tab.active_.assign(static_cast<std::size_t>(m), true);

  // Phase 1: minimise the sum of artificials.
  for (Index j = 0; j < n; ++j) tab.t_(m, j) = -tab.t_.col(j).head(m).sum();
  tab.t_(m, tab.rhs()) = -tab.t_.col(tab.rhs()).head(m).sum();
  tab.optimize(n + m, tol);

  LpResult result;
  const double scale = 1.0 + b.cwiseAbs().maxCoeff();
  if (-tab.t_(m, tab.rhs()) > 1e3 * tol * scale) {
    result.status = LpStatus::Infeasible;
    result.pivots = tab.pivots_;
    return result;
  }

  // Drive remaining artificials out of the basis; rows where that is
  // impossible are redundant and get deactivated.
  for (Index i = 0; i < m; ++i) {
    if (tab.basis_[static_cast<std::size_t>(i)] < n) continue;
    Index col = -1;
    for (Index j = 0; j < n; ++j) {
      if (std::abs(tab.t_(i, j)) > tol) {
        col = j;
        break;
      }
    }
    if (col >= 0)
      tab.pivot(i, col);
    else
      tab.active_[static_cast<std::size_t>(i)] = false;
  }

  // Phase 2 reduced costs.
  tab.t_.row(m).setZero();
  tab.t_.row(m).head(n) = c.transpose();
  for (Index i = 0; i < m; ++i) {
    if (!tab.active_[static_cast<std::size_t>(i)]) continue;
    const double cb = c(tab.basis_[static_cast<std::size_t>(i)]);
    if (cb != 0.0) tab.t_.row(m) -= cb * tab.t_.row(i);
  }
  if (!tab.optimize(n, tol)) {
    result.status = LpStatus::Unbounded;
    result.pivots = tab.pivots_;
    return result;
  }

  result.status = LpStatus::Optimal;
  result.x = Vector::Zero(n);
  for (Index i = 0; i < m; ++i) {
    const Index v = tab.basis_[static_cast<std::size_t>(i)];
    if (tab.active_[static_cast<std::size_t>(i)] && v < n) result.x(v) = tab.t_(i, tab.rhs());
  }
  result.objective = c.dot(result.x);
  result.pivots = tab.pivots_;
  return result;
}

}  // namespace mol

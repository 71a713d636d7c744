#include "mol/solvers.hpp"

#include <Eigen/IterativeLinearSolvers>

#include <cmath>
#include <sstream>

namespace mol {

std::string to_string(SolveMethod m) {
  switch (m) {
    case SolveMethod::DenseLU: return "dense-lu";
    case SolveMethod::Iterative: return "bicgstab";
    case SolveMethod::Newton: return "newton";
  }
  return "dense-lu";
}

namespace {

// Row-replacement mask: rows flagged true become identity rows.
using RowMask = std::vector<bool>;

Matrix dense_system(const DiscreteOperator& op, const Vector& shift, const RowMask* replace) {
  Matrix a = op.to_dense();
  a.diagonal() += shift;
  if (replace) {
    for (Index i = 0; i < a.rows(); ++i) {
      if ((*replace)[static_cast<std::size_t>(i)]) {
        a.row(i).setZero();
        a(i, i) = 1.0;
      }
    }
  }
  return a;
}

SparseMatrix sparse_system(const DiscreteOperator& op, const Vector& shift, const RowMask* replace) {
  const SparseMatrix l = op.to_sparse();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(l.nonZeros() + l.rows()));
  for (Index i = 0; i < l.rows(); ++i) {
    if (replace && (*replace)[static_cast<std::size_t>(i)]) {
      trips.emplace_back(i, i, 1.0);
      continue;
    }
    for (SparseMatrix::InnerIterator it(l, i); it; ++it) trips.emplace_back(i, it.col(), it.value());
    trips.emplace_back(i, i, shift(i));
  }
  SparseMatrix a(l.rows(), l.cols());
  a.setFromTriplets(trips.begin(), trips.end());
  return a;
}

SolveReport solve_system(const DiscreteOperator& op, const Vector& shift, const Vector& rhs, const RowMask* replace,
                         const SolveOptions& opts) {
  const Index n = op.size();
  SolveReport rep;
  if (n <= opts.dense_cap) {
    const Matrix a = dense_system(op, shift, replace);
    Eigen::PartialPivLU<Matrix> lu(a);
    const double rc = lu.rcond();
    if (!(rc >= opts.min_rcond)) {
      std::ostringstream msg;
      msg << "linear system is numerically singular (reciprocal condition estimate " << rc << ")";
      throw SolverError(msg.str());
    }
    rep.solution = lu.solve(rhs);
    rep.method = SolveMethod::DenseLU;
    rep.iterations = 1;
  } else {
    const SparseMatrix a = sparse_system(op, shift, replace);
    Eigen::BiCGSTAB<SparseMatrix, Eigen::DiagonalPreconditioner<double>> solver;
    solver.compute(a);
    solver.setTolerance(opts.tol);
    const Index chunk = 50;
    solver.setMaxIterations(chunk);
    Vector x = Vector::Zero(n);
    Index total = 0;
    bool done = false;
    while (total < opts.max_iter) {
      x = solver.solveWithGuess(rhs, x);
      total += solver.iterations();
      rep.residual_history.push_back(solver.error());
      if (solver.info() == Eigen::Success) {
        done = true;
        break;
      }
      if (solver.info() != Eigen::NoConvergence || !x.allFinite()) break;
    }
    if (!done) {
      std::ostringstream msg;
      msg << "BiCGSTAB did not reach relative residual " << opts.tol << " after " << total << " iterations;";
      for (double r : rep.residual_history) msg << ' ' << r;
      throw ConvergenceError(msg.str());
    }
    rep.solution = std::move(x);
    rep.method = SolveMethod::Iterative;
    rep.iterations = total;
  }
  if (!rep.solution.allFinite()) throw SolverError("linear solve produced non-finite values");
  return rep;
}

void check_problem(const DiscreteOperator& op, const Vector& c, const Vector& f) {
  const Index n = op.size();
  if (c.size() != n || f.size() != n) throw ShapeError("c and f must have one entry per point");
  if (!(c.array() > 0.0).all()) throw ParameterError("c must be positive");
}

}  // namespace

SolveReport solve_linear(const DiscreteOperator& op, const Vector& c, const Vector& f, const SolveOptions& opts) {
  check_problem(op, c, f);
  SolveReport rep = solve_system(op, c, f, nullptr, opts);
  rep.residual_norm = (op.apply(rep.solution) + c.cwiseProduct(rep.solution) - f).norm();
  return rep;
}

SolveReport solve_linear(const DiscreteOperator& op, double c, const Vector& f, const SolveOptions& opts) {
  return solve_linear(op, Vector::Constant(op.size(), c), f, opts);
}

SolveReport solve_dirichlet(const DiscreteOperator& op, const Vector& c, const Vector& f, const DirichletData& bc,
                            const SolveOptions& opts) {
  check_problem(op, c, f);
  const Index n = op.size();
  if (bc.split.size() != n) throw ShapeError("boundary split does not match the operator");
  if (bc.g_tilde.size() != n) throw ShapeError("boundary values must have one entry per point");
  if (bc.split.interior.empty() && bc.split.near_boundary.empty()) throw ParameterError("empty boundary split");

  const RowMask mask = bc.split.near_mask();
  Vector rhs = f;
  for (Index i : bc.split.near_boundary) rhs(i) = bc.g_tilde(i);
  SolveReport rep = solve_system(op, c, rhs, &mask, opts);

  const Vector r = op.apply(rep.solution) + c.cwiseProduct(rep.solution) - f;
  double sq = 0.0;
  for (Index i : bc.split.interior) sq += r(i) * r(i);
  rep.residual_norm = std::sqrt(sq);
  return rep;
}

SolveReport solve(const ForwardProblem& problem, const SolveOptions& opts) {
  if (!problem.op) throw ParameterError("forward problem has no operator");
  if (problem.boundary) return solve_dirichlet(*problem.op, problem.c, problem.f, *problem.boundary, opts);
  return solve_linear(*problem.op, problem.c, problem.f, opts);
}

SolveReport solve_semilinear(const DiscreteOperator& op, const Vector& kappa, const Vector& init,
                             const NewtonOptions& opts) {
  const Index n = op.size();
  if (kappa.size() != n || init.size() != n) throw ShapeError("kappa and init must have one entry per point");
  if (!(kappa.array() > 0.0).all()) throw ParameterError("kappa must be positive");
  if (opts.max_iter < 0) throw ParameterError("max_iter must be non-negative");

  const double scale = std::sqrt(static_cast<double>(n));
  auto residual = [&](const Vector& u) -> Vector {
    Vector f(n);
    for (Index i = 0; i < n; ++i) f(i) = semilinear_source(u(i), kappa(i));
    return op.apply(u) + u - f;
  };

  SolveReport rep;
  rep.method = SolveMethod::Newton;
  Vector u = init;
  Vector r = residual(u);
  rep.residual_history.push_back(r.norm());
  Index it = 0;
  while (r.norm() / scale >= opts.tol) {
    if (it >= opts.max_iter)
      throw NewtonError("Newton iteration did not converge in " + std::to_string(opts.max_iter) + " steps", u);
    const Vector shift = Vector::Ones(n) - (3.0 * u.array() + 1.0 + 2.0 * kappa.array()).matrix();
    Vector step;
    try {
      step = solve_system(op, shift, r, nullptr, opts.linear).solution;
    } catch (const Error& e) {
      throw NewtonError(std::string("Newton Jacobian solve failed: ") + e.what(), u);
    }
    u -= step;
    r = residual(u);
    rep.residual_history.push_back(r.norm());
    ++it;
    if (!r.allFinite()) throw NewtonError("Newton iterate became non-finite", u);
  }
  rep.solution = std::move(u);
  rep.iterations = it;
  rep.residual_norm = r.norm();
  return rep;
}

}  // namespace mol

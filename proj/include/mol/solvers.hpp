#pragma once

// Forward solvers for (L + c I) u = f: closed manifolds, Dirichlet data on
// the near-boundary set, and the semilinear torus problem via Newton.

#include "mol/core.hpp"
#include "mol/geometry.hpp"
#include "mol/operators.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mol {

enum class SolveMethod { DenseLU, Iterative, Newton };

std::string to_string(SolveMethod m);

struct SolveOptions {
  Index dense_cap = 4096;  // dense LU up to this size, BiCGSTAB above
  double tol = 1e-10;      // relative residual for the Krylov path
  Index max_iter = 20000;
  double min_rcond = 1e-14;
};

struct SolveReport {
  Vector solution;
  double residual_norm = 0.0;
  Index iterations = 0;
  SolveMethod method = SolveMethod::DenseLU;
  std::vector<double> residual_history;  // Krylov / Newton residuals
};

// Near-boundary rows are replaced by identity rows with right-hand side g̃.
struct DirichletData {
  BoundarySplit split;
  Vector g_tilde;  // length N; only near-boundary entries are read
};

struct ForwardProblem {
  const DiscreteOperator* op = nullptr;
  Vector c;  // length N, positive
  Vector f;
  std::optional<DirichletData> boundary;
};

SolveReport solve_linear(const DiscreteOperator& op, const Vector& c, const Vector& f, const SolveOptions& opts = {});
SolveReport solve_linear(const DiscreteOperator& op, double c, const Vector& f, const SolveOptions& opts = {});
SolveReport solve_dirichlet(const DiscreteOperator& op, const Vector& c, const Vector& f, const DirichletData& bc,
                            const SolveOptions& opts = {});
SolveReport solve(const ForwardProblem& problem, const SolveOptions& opts = {});

// Newton failure; carries the last iterate.
class NewtonError : public SolverError {
 public:
  NewtonError(const std::string& what, Vector iterate) : SolverError(what), iterate_(std::move(iterate)) {}
  const Vector& iterate() const { return iterate_; }

 private:
  Vector iterate_;
};

// Source term of the semilinear benchmark, f(u, kappa).
inline double semilinear_source(double u, double kappa) {
  return 1.5 * u * u + u + 2.0 * kappa * u - 0.5 * kappa * kappa;
}

struct NewtonOptions {
  double tol = 1e-10;  // on |F(u)|_2 / sqrt(N)
  Index max_iter = 50;
  SolveOptions linear;
};

// F(u) = L u + u - f(u, kappa), J = L + I - diag(3u + 1 + 2 kappa).
SolveReport solve_semilinear(const DiscreteOperator& op, const Vector& kappa, const Vector& init,
                             const NewtonOptions& opts = {});

}  // namespace mol

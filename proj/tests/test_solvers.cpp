#include <doctest.h>

#include "mol/solvers.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace mol;

namespace {

// 50 x 50 intrinsic grid, the benchmark cloud for N = 2500 forward problems.
const PointCloud& torus2500() {
  static const PointCloud c = grid_cloud(ManifoldKind::Torus, 50, 50, 2.0, 1.0);
  return c;
}

DiscreteOperator build(const PointCloud& c, const Vector& kappa, Estimator e = Estimator::DM) {
  OperatorSettings s;
  s.estimator = e;
  return OperatorFactory(c.points, s).build(kappa);
}

Vector gaussian(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

Vector apply_shifted(const DiscreteOperator& op, double c, const Vector& v) { return op.apply(v) + c * v; }

}  // namespace

TEST_SUITE("solvers") {
  TEST_CASE("exact inverse pair") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 600, 2.0, 1.0, 1);
    for (Estimator e : {Estimator::DM, Estimator::GMLS, Estimator::RBF}) {
      const DiscreteOperator op = build(c, Vector::Constant(600, 1.5), e);
      const Vector v = gaussian(600, 2);
      const SolveReport rep = solve_linear(op, 1.0, apply_shifted(op, 1.0, v));
      CHECK(rep.method == SolveMethod::DenseLU);
      CHECK(oracle::rel_l2(rep.solution, v) < 1e-8);
      CHECK(rep.residual_norm / apply_shifted(op, 1.0, v).norm() < 1e-8);
    }
  }

  TEST_CASE("zero right-hand side gives zero") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 300, 2.0, 1.0, 3);
    const DiscreteOperator op = build(c, Vector::Ones(300));
    const SolveReport rep = solve_linear(op, 1.0, Vector::Zero(300));
    CHECK(rep.solution.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("c must be positive and shapes must match") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 100, 2.0, 1.0, 3);
    const DiscreteOperator op = build(c, Vector::Ones(100));
    CHECK_THROWS_AS(solve_linear(op, 0.0, Vector::Ones(100)), ParameterError);
    CHECK_THROWS_AS(solve_linear(op, 1.0, Vector::Ones(99)), ShapeError);
    ForwardProblem p;
    CHECK_THROWS_AS(solve(p), ParameterError);
  }

  TEST_CASE("manufactured cos(theta) with DM at N = 2500") {
    const PointCloud& c = torus2500();
    const DiscreteOperator op = build(c, Vector::Ones(c.size()));
    const Vector u = oracle::cos_theta(c);
    const Vector f = u + oracle::neg_laplacian_cos_theta(c);
    const SolveReport rep = solve_linear(op, 1.0, f);
    const double err = oracle::rel_l2(rep.solution, u);
    MESSAGE("manufactured DM solve error: " << err);
    CHECK(err < 0.05);
  }

  TEST_CASE("linearity in the right-hand side") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 500, 2.0, 1.0, 4);
    const DiscreteOperator op = build(c, Vector::Constant(500, 2.0));
    const Vector f1 = gaussian(500, 5), f2 = gaussian(500, 6);
    const Vector s12 = solve_linear(op, 1.0, f1 + f2).solution;
    const Vector s1 = solve_linear(op, 1.0, f1).solution;
    const Vector s2 = solve_linear(op, 1.0, f2).solution;
    CHECK(oracle::rel_l2(s1 + s2, s12) < 1e-8);
  }

  TEST_CASE("Krylov path agrees with dense LU") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 800, 2.0, 1.0, 7);
    const DiscreteOperator op = build(c, Vector::Ones(800));
    const Vector f = gaussian(800, 8);
    SolveOptions o;
    o.dense_cap = 10;
    const SolveReport it = solve_linear(op, 1.0, f, o);
    const SolveReport lu = solve_linear(op, 1.0, f);
    CHECK(it.method == SolveMethod::Iterative);
    CHECK(it.iterations > 0);
    CHECK(!it.residual_history.empty());
    CHECK(oracle::rel_l2(it.solution, lu.solution) < 1e-8);
  }

  TEST_CASE("Krylov stall reports non-convergence") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 400, 2.0, 1.0, 7);
    const DiscreteOperator op = build(c, Vector::Ones(400));
    SolveOptions o;
    o.dense_cap = 10;
    o.max_iter = 1;
    o.tol = 1e-15;
    CHECK_THROWS_AS(solve_linear(op, 1e-3, gaussian(400, 9), o), ConvergenceError);
  }

  TEST_CASE("Dirichlet rows reproduce the boundary data exactly") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 700, 2.0, 1.0, 10);
    const DiscreteOperator op = build(c, Vector::Ones(700), Estimator::GMLS);
    const Vector v = gaussian(700, 11);
    DirichletData bc{split_near_boundary(c, default_boundary_epsilon(c)), v};
    REQUIRE(!bc.split.near_boundary.empty());
    const Vector c1 = Vector::Ones(700);
    const SolveReport rep = solve_dirichlet(op, c1, apply_shifted(op, 1.0, v), bc);
    for (Index i : bc.split.near_boundary) CHECK(std::abs(rep.solution(i) - v(i)) < 1e-8 * (1.0 + std::abs(v(i))));
    CHECK(oracle::rel_l2(rep.solution, v) < 1e-8);
  }

  TEST_CASE("all points near the boundary returns the boundary data") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 200, 2.0, 1.0, 12);
    const DiscreteOperator op = build(c, Vector::Ones(200), Estimator::GMLS);
    const Vector g = gaussian(200, 13);
    DirichletData bc{split_near_boundary(c, 1e6), g};
    REQUIRE(bc.split.interior.empty());
    const SolveReport rep = solve_dirichlet(op, Vector::Ones(200), Vector::Ones(200), bc);
    CHECK((rep.solution - g).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("semi-torus manufactured solution with GMLS at N = 2500") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 2500, 2.0, 1.0, 14);
    const double a = 0.5, b = -0.4, k0 = 6.0;
    Vector kappa(c.size()), v(c.size()), f(c.size());
    for (Index i = 0; i < c.size(); ++i) {
      const double t = (*c.intrinsic)(i, 0), p = (*c.intrinsic)(i, 1);
      kappa(i) = a * c.points(i, 0) + b * c.points(i, 1) + k0;
      v(i) = std::cos(t) * std::sin(p);
      f(i) = oracle::neg_div_linear_kappa(t, p, 2.0, 1.0, a, b, k0) + v(i);
    }
    const DiscreteOperator op = build(c, kappa, Estimator::GMLS);
    DirichletData bc{split_near_boundary(c, default_boundary_epsilon(c)), v};
    const SolveReport rep = solve_dirichlet(op, Vector::Ones(c.size()), f, bc);
    Vector du(bc.split.interior.size()), dv(bc.split.interior.size());
    for (std::size_t j = 0; j < bc.split.interior.size(); ++j) {
      du(static_cast<Index>(j)) = rep.solution(bc.split.interior[j]);
      dv(static_cast<Index>(j)) = v(bc.split.interior[j]);
    }
    const double err = oracle::rel_l2(du, dv);
    MESSAGE("semi-torus GMLS interior error: " << err);
    CHECK(err < 0.10);
  }

  TEST_CASE("discrete maximum principle smoke test") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 2500, 2.0, 1.0, 15);
    const BoundarySplit split = split_near_boundary(c, default_boundary_epsilon(c));
    Vector f(c.size());
    for (Index i = 0; i < c.size(); ++i) f(i) = 1.0 + c.points(i, 2) * c.points(i, 2);
    for (Estimator e : {Estimator::DM, Estimator::GMLS}) {
      const DiscreteOperator op = build(c, Vector::Ones(c.size()), e);
      const SolveReport rep = solve_dirichlet(op, Vector::Ones(c.size()), f, DirichletData{split, Vector::Zero(c.size())});
      const double umax = rep.solution.cwiseAbs().maxCoeff();
      CHECK(umax > 0.0);
      CHECK(rep.solution.minCoeff() >= -0.05 * umax);
    }
  }

  TEST_CASE("semilinear benchmark with DM at N = 2500") {
    const PointCloud& c = torus2500();
    const double a = 1.0;
    const Vector truth = a * oracle::cos_theta(c);
    const Vector kappa = (a * (2.0 + oracle::cos_theta(c).array())).matrix();
    OperatorSettings s;
    s.dm_epsilon_scale = 0.5;
    const DiscreteOperator op = OperatorFactory(c.points, s).build(kappa);
    // The discrete problem has several roots; start from the sampled truth.
    const SolveReport rep = solve_semilinear(op, kappa, truth);
    const double err = oracle::rel_l2(rep.solution, truth);
    MESSAGE("semilinear error " << err << " after " << rep.iterations << " Newton steps");
    CHECK(rep.method == SolveMethod::Newton);
    CHECK(rep.iterations <= 10);
    CHECK(err < 0.05);
    CHECK(rep.residual_norm / std::sqrt(2500.0) < 1e-10);

    SUBCASE("quadratic tail") {
      const auto& h = rep.residual_history;
      for (std::size_t k = 0; k + 1 < h.size(); ++k)
        if (h[k] < 1e-3) CHECK(h[k + 1] <= std::max(std::pow(h[k], 1.5), 1e-12));
    }

    SUBCASE("a converged iterate is a fixed point") {
      const SolveReport again = solve_semilinear(op, kappa, rep.solution);
      CHECK(again.iterations <= 1);
      CHECK(oracle::rel_l2(again.solution, rep.solution) < 1e-10);
    }

    SUBCASE("the zero start converges to some root") {
      const SolveReport zero = solve_semilinear(op, kappa, Vector::Zero(c.size()));
      CHECK(zero.residual_norm / std::sqrt(2500.0) < 1e-10);
    }

    SUBCASE("iteration cap") {
      NewtonOptions o;
      o.max_iter = 1;
      CHECK_THROWS_AS(solve_semilinear(op, kappa, Vector::Zero(c.size()), o), NewtonError);
    }
  }

  TEST_CASE("semilinear source and zero kappa") {
    // f(u, kappa) at the true pair balances the operator terms pointwise.
    CHECK(semilinear_source(0.0, 0.0) == 0.0);
    CHECK(semilinear_source(1.0, 2.0) == doctest::Approx(1.5 + 1.0 + 4.0 - 2.0));
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 100, 2.0, 1.0, 16);
    const Vector zero_kappa = Vector::Zero(100);
    CHECK_THROWS_AS(build(c, zero_kappa), ParameterError);
    const DiscreteOperator op = build(c, Vector::Ones(100));
    CHECK_THROWS_AS(solve_semilinear(op, zero_kappa, Vector::Zero(100)), ParameterError);
  }
}

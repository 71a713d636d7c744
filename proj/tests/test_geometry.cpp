#include <doctest.h>

#include "mol/geometry.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

using namespace mol;
namespace fs = std::filesystem;

namespace {
constexpr double kPi = std::numbers::pi;

double implicit_residual(const Eigen::Vector3d& p, double R, double r) {
  const double rho = std::hypot(p.x(), p.y()) - R;
  return rho * rho + p.z() * p.z() - r * r;
}
}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("embedding at the origin angles") {
    const Eigen::Vector3d p = torus_embedding(0.0, 0.0, 2.0, 1.0);
    CHECK(p.x() == doctest::Approx(3.0));
    CHECK(p.y() == 0.0);
    CHECK(p.z() == 0.0);
  }

  TEST_CASE("intrinsic coordinates invert the embedding") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
    for (int i = 0; i < 200; ++i) {
      const double t = u(rng), p = u(rng);
      const Eigen::Vector2d back = torus_intrinsic<double>(torus_embedding(t, p, 2.0, 1.0), 2.0);
      CHECK(std::abs(std::remainder(back(0) - t, 2.0 * kPi)) < 1e-12);
      CHECK(std::abs(std::remainder(back(1) - p, 2.0 * kPi)) < 1e-12);
    }
  }

  TEST_CASE("sampled points satisfy the implicit torus equation") {
    for (ManifoldKind kind : {ManifoldKind::Torus, ManifoldKind::SemiTorus}) {
      const PointCloud c = sample_cloud(kind, 2000, 2.0, 1.0, 11);
      REQUIRE(c.size() == 2000);
      REQUIRE(c.intrinsic.has_value());
      double worst = 0.0;
      for (Index i = 0; i < c.size(); ++i)
        worst = std::max(worst, std::abs(implicit_residual(c.points.row(i).transpose(), 2.0, 1.0)));
      CHECK(worst < 1e-12);
    }
  }

  TEST_CASE("semi-torus phi stays in [0, pi]") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 1000, 2.0, 1.0, 5);
    CHECK(c.size() == 1000);
    CHECK(c.intrinsic->col(1).minCoeff() >= 0.0);
    CHECK(c.intrinsic->col(1).maxCoeff() <= kPi);
    CHECK(c.intrinsic->col(0).minCoeff() >= 0.0);
    CHECK(c.intrinsic->col(0).maxCoeff() < 2.0 * kPi);
  }

  TEST_CASE("invalid radii and sizes") {
    CHECK_THROWS_AS(sample_cloud(ManifoldKind::Torus, 10, 1.0, 1.0, 0), ParameterError);
    CHECK_THROWS_AS(sample_cloud(ManifoldKind::Torus, 10, 0.5, 1.0, 0), ParameterError);
    CHECK_THROWS_AS(sample_cloud(ManifoldKind::Torus, 10, 2.0, 0.0, 0), ParameterError);
    CHECK_THROWS_AS(sample_cloud(ManifoldKind::Torus, 0, 2.0, 1.0, 0), ParameterError);
    CHECK_THROWS_AS(grid_cloud(ManifoldKind::Torus, 3, 3, 1.0, 2.0), ParameterError);
    CHECK_THROWS_AS(manifold_from_string("sphere"), ConfigError);
  }

  TEST_CASE("sampling is bitwise reproducible") {
    const PointCloud a = sample_cloud(ManifoldKind::Torus, 500, 2.0, 1.0, 42);
    const PointCloud b = sample_cloud(ManifoldKind::Torus, 500, 2.0, 1.0, 42);
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 500, 2.0, 1.0, 43);
    CHECK(hash_vector(a.points) == hash_vector(b.points));
    CHECK(hash_vector(a.points) != hash_vector(c.points));
  }

  TEST_CASE("grid clouds") {
    const PointCloud t = grid_cloud(ManifoldKind::Torus, 20, 30, 2.0, 1.0);
    CHECK(t.size() == 600);
    // No seam duplicates on the closed torus.
    std::set<std::pair<long, long>> seen;
    for (Index i = 0; i < t.size(); ++i)
      seen.insert({std::lround(1e9 * t.points(i, 0)), std::lround(1e9 * t.points(i, 1)) * 7 +
                                                          std::lround(1e9 * t.points(i, 2))});
    CHECK(static_cast<Index>(seen.size()) == 600);
    const PointCloud s = grid_cloud(ManifoldKind::SemiTorus, 10, 11, 2.0, 1.0);
    CHECK(s.intrinsic->col(1).minCoeff() == 0.0);
    CHECK(s.intrinsic->col(1).maxCoeff() == doctest::Approx(kPi).epsilon(1e-15));
  }

  TEST_CASE("knn: two points list each other") {
    Points p(2, 3);
    p << 0, 0, 0, 1, 0, 0;
    const NeighborIndex knn = build_knn(p, 2);
    CHECK(knn.indices(0, 0) == 0);
    CHECK(knn.indices(0, 1) == 1);
    CHECK(knn.indices(1, 0) == 1);
    CHECK(knn.indices(1, 1) == 0);
    CHECK(knn.distances(0, 1) == doctest::Approx(1.0));
  }

  TEST_CASE("knn: k = 1 lists only self") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 50, 2.0, 1.0, 1);
    const NeighborIndex knn = build_knn(c.points, 1);
    for (Index i = 0; i < c.size(); ++i) {
      CHECK(knn.indices(i, 0) == i);
      CHECK(knn.distances(i, 0) == 0.0);
    }
  }

  TEST_CASE("knn: flat grid interior points see their four axis neighbours") {
    const int n = 7;
    Points p(n * n, 3);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) p.row(a * n + b) << a * 0.5, b * 0.5, 0.0;
    const NeighborIndex knn = build_knn(p, 5);
    for (int a = 1; a < n - 1; ++a)
      for (int b = 1; b < n - 1; ++b) {
        const Index i = a * n + b;
        CHECK(knn.indices(i, 0) == i);
        std::set<Index> got;
        for (Index j = 1; j < 5; ++j) got.insert(knn.indices(i, j));
        // Brute-force oracle: the four points at squared distance 0.25.
        std::set<Index> want;
        for (Index j = 0; j < p.rows(); ++j)
          if (j != i && std::abs((p.row(j) - p.row(i)).squaredNorm() - 0.25) < 1e-14) want.insert(j);
        CHECK(got == want);
      }
  }

  TEST_CASE("knn: rows are sorted and match brute force") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 300, 2.0, 1.0, 9);
    const Index k = 12;
    const NeighborIndex knn = build_knn(c.points, k);
    for (Index i = 0; i < c.size(); ++i) {
      std::vector<std::pair<double, Index>> all;
      for (Index j = 0; j < c.size(); ++j) all.push_back({(c.points.row(j) - c.points.row(i)).squaredNorm(), j});
      std::sort(all.begin(), all.end());
      CHECK(knn.indices(i, 0) == i);
      for (Index j = 0; j < k; ++j) {
        CHECK(knn.distances(i, j) == doctest::Approx(all[static_cast<std::size_t>(j)].first).epsilon(1e-12));
        if (j > 0) CHECK(knn.distances(i, j) >= knn.distances(i, j - 1));
      }
    }
  }

  TEST_CASE("knn: k out of range") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 10, 2.0, 1.0, 1);
    CHECK_THROWS_AS(build_knn(c.points, 11), ParameterError);
    CHECK_THROWS_AS(build_knn(c.points, 0), ParameterError);
  }

  TEST_CASE("fill distance halves when N quadruples") {
    std::vector<double> ratios;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double h1 = estimate_fill_distance(sample_cloud(ManifoldKind::Torus, 250, 2.0, 1.0, seed));
      const double h4 = estimate_fill_distance(sample_cloud(ManifoldKind::Torus, 1000, 2.0, 1.0, seed + 100));
      CHECK(h4 < h1);
      ratios.push_back(h1 / h4);
    }
    std::nth_element(ratios.begin(), ratios.begin() + 5, ratios.end());
    const double halving = ratios[5] / 2.0;
    CHECK(halving >= 0.5);
    CHECK(halving <= 2.0);
  }

  TEST_CASE("boundary split examples") {
    Intrinsic ang(3, 2);
    ang << 0.0, kPi / 2, 1.0, 0.0, 2.0, kPi;
    PointCloud c;
    c.kind = ManifoldKind::SemiTorus;
    c.major_radius = 2.0;
    c.minor_radius = 1.0;
    c.points.resize(3, 3);
    for (Index i = 0; i < 3; ++i) c.points.row(i) = torus_embedding(ang(i, 0), ang(i, 1), 2.0, 1.0).transpose();
    c.intrinsic = ang;
    const Vector dist = boundary_distance(c);
    CHECK(dist(0) == doctest::Approx(3.0 * kPi / 2));
    const BoundarySplit s = split_near_boundary(c, 0.1);
    CHECK(s.interior == std::vector<Index>{0});
    CHECK(s.near_boundary == std::vector<Index>{1, 2});
    const BoundarySplit tiny = split_near_boundary(c, 1e-300);
    CHECK(tiny.near_boundary == std::vector<Index>{1, 2});
    CHECK_THROWS_AS(split_near_boundary(c, -1.0), ParameterError);
  }

  TEST_CASE("torus has no near-boundary points") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 200, 2.0, 1.0, 3);
    for (double eps : {0.0, 0.5, 100.0}) {
      const BoundarySplit s = split_near_boundary(c, eps);
      CHECK(s.near_boundary.empty());
      CHECK(s.interior.size() == 200);
    }
  }

  TEST_CASE("boundary split is a partition and respects epsilon") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 800, 2.0, 1.0, 8);
    const double eps = default_boundary_epsilon(c);
    const BoundarySplit s = split_near_boundary(c, eps);
    std::vector<Index> all = s.interior;
    all.insert(all.end(), s.near_boundary.begin(), s.near_boundary.end());
    std::sort(all.begin(), all.end());
    std::vector<Index> want(800);
    std::iota(want.begin(), want.end(), Index{0});
    CHECK(all == want);
    const Vector d = boundary_distance(c);
    for (Index i : s.interior) CHECK(d(i) > eps);
    for (Index i : s.near_boundary) CHECK(d(i) <= eps);
    CHECK(!s.near_boundary.empty());
  }

  TEST_CASE("boundary split is stable under permutation") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 400, 2.0, 1.0, 21);
    std::vector<Index> perm(400);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
    PointCloud p = c;
    for (Index i = 0; i < 400; ++i) {
      p.points.row(i) = c.points.row(perm[static_cast<std::size_t>(i)]);
      p.intrinsic->row(i) = c.intrinsic->row(perm[static_cast<std::size_t>(i)]);
    }
    const BoundarySplit a = split_near_boundary(c, 0.3);
    const BoundarySplit b = split_near_boundary(p, 0.3);
    std::set<Index> mapped;
    for (Index i : b.near_boundary) mapped.insert(perm[static_cast<std::size_t>(i)]);
    CHECK(mapped == std::set<Index>(a.near_boundary.begin(), a.near_boundary.end()));
  }

  TEST_CASE("custom boundary callback") {
    Points p(4, 3);
    p << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
    const PointCloud c = custom_cloud(p);
    CHECK_THROWS_AS(split_near_boundary(c, 0.5), ParameterError);
    const BoundarySplit s = split_near_boundary(c, 0.5, [&](Index i) { return std::min(p(i, 0), 3.0 - p(i, 0)); });
    CHECK(s.near_boundary == std::vector<Index>{0, 3});
  }

  TEST_CASE("cloud save and load round trip bitwise") {
    const fs::path dir = fs::temp_directory_path() / "mol_test_cloud";
    fs::create_directories(dir);
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 123, 2.0, 1.0, 77);
    save_cloud(c, (dir / "c.csv").string(), (dir / "c.json").string());
    const PointCloud d = load_cloud((dir / "c.csv").string(), (dir / "c.json").string());
    CHECK(d.kind == ManifoldKind::SemiTorus);
    CHECK(d.seed == 77);
    CHECK(d.major_radius == 2.0);
    CHECK(hash_vector(d.points) == hash_vector(c.points));
    CHECK(hash_vector(*d.intrinsic) == hash_vector(*c.intrinsic));
    CHECK_THROWS_AS(load_cloud((dir / "missing.csv").string(), (dir / "c.json").string()), IoError);
    fs::remove_all(dir);
  }
}

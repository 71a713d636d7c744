#include <doctest.h>

#include "mol/fields.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

using namespace mol;
namespace fs = std::filesystem;

namespace {

KappaField field(KappaFamily f, KappaCoefficients c) {
  KappaField k;
  k.family = f;
  k.coeffs = c;
  return k;
}

std::map<KappaFamily, int> family_counts(const std::vector<KappaFamily>& f) {
  std::map<KappaFamily, int> out;
  for (KappaFamily x : f) ++out[x];
  return out;
}

std::string dir_bytes(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::string all;
  for (const auto& n : names) all += n + "\n" + oracle::file_bytes((dir / n).string());
  return all;
}

}  // namespace

TEST_SUITE("fields") {
  TEST_CASE("family formulas at fixed coefficients") {
    CHECK(field(KappaFamily::Linear, {})(1.7, -2.2) == 6.0);
    CHECK(field(KappaFamily::Linear, {.a = 1.0})(3.0, 0.0) == 9.0);
    CHECK(field(KappaFamily::Linear, {.a = 0.5, .b = -0.25, .c = 0.3})(2.0, 4.0) == doctest::Approx(1.0 - 1.0 + 6.3));
    CHECK(field(KappaFamily::Exponential, {.c = 2.0})(0.3, -1.0) == 2.0);
    CHECK(field(KappaFamily::Exponential, {.a = 0.1, .b = 0.2, .c = 1.0})(1.0, 2.0) ==
          doctest::Approx(0.1 * std::exp(1.0) + 0.2 * std::exp(2.0) + 1.0));
    CHECK(field(KappaFamily::Quadratic, {.c = 10.0, .a1 = 1.0})(2.0, 5.0) == 14.0);
    CHECK(field(KappaFamily::Quadratic, {.c = 9.0, .a1 = 0.1, .b1 = -0.2, .a2 = 0.5, .b2 = 0.7})(1.0, -2.0) ==
          doctest::Approx(0.1 - 0.8 + 0.5 - 1.4 + 9.0));
  }

  TEST_CASE("piecewise table collapses to a linear field") {
    const KappaField k = field(KappaFamily::PiecewiseLinear, {.a1 = 0.4, .b1 = -0.7, .a2 = 0.4, .b2 = -0.7});
    for (double x : {-1.0, 1.0})
      for (double y : {-1.0, 1.0}) CHECK(k(x, y) == doctest::Approx(0.4 * x - 0.7 * y + 10.0));
  }

  TEST_CASE("piecewise quadrants") {
    const KappaField k = field(KappaFamily::PiecewiseLinear, {.a1 = 1.0, .b1 = 2.0, .a2 = 3.0, .b2 = 4.0});
    CHECK(k(-1.0, -1.0) == doctest::Approx(-1.0 - 2.0 + 10.0));
    CHECK(k(1.0, -1.0) == doctest::Approx(1.0 - 2.0 + 10.0));
    CHECK(k(-1.0, 1.0) == doctest::Approx(-1.0 + 4.0 + 10.0));
    CHECK(k(1.0, 1.0) == doctest::Approx(3.0 + 4.0 + 10.0));
  }

  TEST_CASE("evaluate on the torus and purity") {
    Points p(1, 3);
    p.row(0) = torus_embedding(0.0, 0.0, 2.0, 1.0).transpose();
    CHECK(evaluate(field(KappaFamily::Linear, {.a = 1.0}), p)(0) == doctest::Approx(9.0));
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0);
    const KappaField k = sample_kappa(KappaFamily::Quadratic, 5, g.locations());
    CHECK(hash_vector(evaluate(k, g.locations())) == hash_vector(evaluate(k, g.locations())));
  }

  TEST_CASE("family names") {
    for (KappaFamily f : kClosedFormFamilies) CHECK(kappa_family_from_string(to_string(f)) == f);
    CHECK_THROWS_AS(kappa_family_from_string("cubic"), ConfigError);
    CHECK_THROWS_AS(split_from_string("validation"), ConfigError);
  }

  TEST_CASE("sampled fields are positive and seeded") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 500, 2.0, 1.0, 1);
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0);
    Points domain(c.size() + g.size(), 3);
    domain << c.points, g.locations();
    for (KappaFamily f : kClosedFormFamilies)
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const KappaField k = sample_kappa(f, seed, domain);
        CHECK(evaluate(k, domain).minCoeff() > 0.1);
        CHECK(k.seed == seed);
        const KappaField again = sample_kappa(f, seed, domain);
        CHECK(hash_vector(evaluate(again, domain)) == hash_vector(evaluate(k, domain)));
      }
  }

  TEST_CASE("impossible ranges raise a configuration error") {
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0);
    KappaRanges r;
    r.linear_c = {-20.0, -19.0};
    r.max_rejections = 20;
    CHECK_THROWS_AS(sample_kappa(KappaFamily::Linear, 1, g.locations(), r), ConfigError);
    KappaRanges bad;
    bad.linear_ab = {1.0, -1.0};
    CHECK_THROWS_AS(sample_kappa(KappaFamily::Linear, 1, g.locations(), bad), ConfigError);
  }

  TEST_CASE("ranges round-trip through JSON") {
    KappaRanges r;
    r.quadratic_c = {7.5, 8.25};
    r.floor = 0.2;
    const KappaRanges back = kappa_ranges_from_json(to_json(r));
    CHECK(back.quadratic_c.lo == 7.5);
    CHECK(back.quadratic_c.hi == 8.25);
    CHECK(back.floor == 0.2);
  }

  TEST_CASE("sensor grid") {
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0);
    CHECK(g.size() == 676);
    CHECK(g.rows * g.cols == 676);
    double worst = 0.0;
    for (Index i = 0; i < g.size(); ++i) {
      const double rho = std::hypot(g.locations()(i, 0), g.locations()(i, 1)) - 2.0;
      worst = std::max(worst, std::abs(rho * rho + g.locations()(i, 2) * g.locations()(i, 2) - 1.0));
    }
    CHECK(worst < 1e-12);
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 30, 2.0, 1.0, 1);
    const SensorGrid at = sensors_at_points(c);
    CHECK(at.size() == 30);
    CHECK(at.locations() == c.points);
  }

  TEST_CASE("grid samples interpolate bilinearly") {
    const Index rows = 10, cols = 12;
    const double dt = 2.0 * std::numbers::pi / rows, dp = 2.0 * std::numbers::pi / cols;
    KappaField k;
    k.family = KappaFamily::GridSamples;
    k.grid = GridSamples{ManifoldKind::Torus, rows, cols, 2.0, Vector(rows * cols)};
    for (Index a = 0; a < rows; ++a)
      for (Index b = 0; b < cols; ++b) k.grid->values(a * cols + b) = 1.0 + 0.3 * a * dt + 0.2 * b * dp;
    // Points away from the seam, where the bilinear interpolant of a
    // function linear in (theta, phi) is exact.
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ut(0.0, (rows - 1) * dt), up(0.0, (cols - 1) * dp);
    Points p(50, 3);
    Vector want(50);
    for (Index i = 0; i < 50; ++i) {
      const double t = ut(rng), ph = up(rng);
      p.row(i) = torus_embedding(t, ph, 2.0, 1.0).transpose();
      want(i) = 1.0 + 0.3 * t + 0.2 * ph;
    }
    CHECK((evaluate(k, p) - want).cwiseAbs().maxCoeff() < 1e-10);
    // Grid nodes are reproduced exactly.
    const PointCloud nodes = grid_cloud(ManifoldKind::Torus, rows, cols, 2.0, 1.0);
    CHECK((evaluate(k, nodes.points) - k.grid->values).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(k(0.0, 0.0), ParameterError);
  }

  TEST_CASE("mixed datasets split into equal quarters") {
    const auto four = mixed_families(4);
    CHECK(std::set<KappaFamily>(four.begin(), four.end()).size() == 4);
    const auto counts = family_counts(mixed_families(1000));
    for (KappaFamily f : kClosedFormFamilies) CHECK(counts.at(f) == 250);
    const auto odd = family_counts(mixed_families(6));
    CHECK(odd.at(KappaFamily::Linear) == 2);
    CHECK(odd.at(KappaFamily::Exponential) == 2);
    CHECK(odd.at(KappaFamily::PiecewiseLinear) == 1);
    CHECK(odd.at(KappaFamily::Quadratic) == 1);
  }

  TEST_CASE("train, test and physics seeds are disjoint") {
    std::set<std::uint64_t> seen;
    for (Split s : {Split::Train, Split::Test, Split::Pde})
      for (Index k = 0; k < 2000; ++k) seen.insert(sample_seed(7, s, k));
    CHECK(seen.size() == 6000);
  }

  TEST_CASE("linear DM dataset at N = 2500 solves to small residuals") {
    const PointCloud c = grid_cloud(ManifoldKind::Torus, 50, 50, 2.0, 1.0);
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0);
    DatasetConfig cfg;
    cfg.count = 100;
    cfg.family = KappaFamily::Linear;
    cfg.seed = 3;
    const OperatorDataset d = generate_dataset(c, g, cfg);
    REQUIRE(d.count() == 100);
    REQUIRE(d.has_solutions());
    CHECK(*std::max_element(d.residuals.begin(), d.residuals.end()) < 1e-8);
    CHECK(d.kappa_sensors.minCoeff() > 0.0);
    CHECK(d.kappa_points.minCoeff() > 0.0);
    // Independent residual check on a few samples with a freshly built operator.
    for (Index k : {0, 37, 99}) {
      OperatorSettings s;
      const DiscreteOperator op = OperatorFactory(c.points, s).build(d.kappa_points.row(k).transpose());
      const Vector u = d.solutions.row(k).transpose();
      CHECK((op.apply(u) + d.c * u - default_rhs(c.points)).norm() < 1e-8);
    }
    CHECK(d.manifest.at("residuals").size() == 100);
    CHECK(d.manifest.at("seeds").size() == 100);
  }

  TEST_CASE("dataset generation is deterministic and round-trips bitwise") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 300, 2.0, 1.0, 4);
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0, 8, 8);
    DatasetConfig cfg;
    cfg.count = 8;
    cfg.seed = 11;
    const fs::path base = fs::temp_directory_path() / "mol_test_dataset";
    fs::remove_all(base);
    const OperatorDataset d1 = generate_dataset(c, g, cfg);
    const OperatorDataset d2 = generate_dataset(c, g, cfg);
    save_dataset(d1, (base / "a").string());
    save_dataset(d2, (base / "b").string());
    CHECK(dir_bytes(base / "a") == dir_bytes(base / "b"));
    const OperatorDataset back = load_dataset((base / "a").string());
    CHECK(hash_vector(back.kappa_sensors) == hash_vector(d1.kappa_sensors));
    CHECK(hash_vector(back.kappa_points) == hash_vector(d1.kappa_points));
    CHECK(hash_vector(back.solutions) == hash_vector(d1.solutions));
    CHECK(hash_vector(back.cloud.points) == hash_vector(d1.cloud.points));
    CHECK(hash_vector(back.sensors.locations()) == hash_vector(d1.sensors.locations()));
    CHECK(back.families == d1.families);
    CHECK(back.seeds == d1.seeds);
    CHECK_THROWS_AS(load_dataset((base / "missing").string()), IoError);
    fs::remove_all(base);
  }

  TEST_CASE("permutation keeps labels with their rows") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 200, 2.0, 1.0, 4);
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0, 6, 6);
    DatasetConfig cfg;
    cfg.count = 12;
    cfg.seed = 2;
    cfg.solve = false;
    const OperatorDataset d = generate_dataset(c, g, cfg);
    std::vector<Index> order(12);
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), std::mt19937_64(9));
    const OperatorDataset p = permute_dataset(d, order);
    CHECK(family_counts(p.families) == family_counts(d.families));
    for (Index k = 0; k < 12; ++k) {
      const Index src = order[static_cast<std::size_t>(k)];
      CHECK(p.seeds[static_cast<std::size_t>(k)] == d.seeds[static_cast<std::size_t>(src)]);
      CHECK(p.families[static_cast<std::size_t>(k)] == d.families[static_cast<std::size_t>(src)]);
      CHECK(p.kappa_sensors.row(k) == d.kappa_sensors.row(src));
    }
    std::vector<Index> bad = order;
    bad[0] = bad[1];
    CHECK_THROWS_AS(permute_dataset(d, bad), ParameterError);
  }

  TEST_CASE("semi-torus datasets carry Dirichlet data") {
    const PointCloud c = sample_cloud(ManifoldKind::SemiTorus, 400, 2.0, 1.0, 4);
    const SensorGrid g = make_sensor_grid(ManifoldKind::SemiTorus, 2.0, 1.0, 6, 6);
    DatasetConfig cfg;
    cfg.count = 3;
    cfg.family = KappaFamily::Quadratic;
    cfg.operators.estimator = Estimator::GMLS;
    const OperatorDataset d = generate_dataset(c, g, cfg);
    REQUIRE(d.boundary.has_value());
    CHECK(!d.boundary->split.near_boundary.empty());
    for (Index k = 0; k < 3; ++k)
      for (Index i : d.boundary->split.near_boundary) CHECK(std::abs(d.solutions(k, i)) < 1e-8);
  }

  TEST_CASE("dataset preconditions") {
    const PointCloud c = sample_cloud(ManifoldKind::Torus, 50, 2.0, 1.0, 4);
    const SensorGrid g = make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0, 4, 4);
    DatasetConfig cfg;
    CHECK_THROWS_AS(generate_dataset(c, g, cfg), ParameterError);
    cfg.count = 2;
    cfg.c = 0.0;
    CHECK_THROWS_AS(generate_dataset(c, g, cfg), ParameterError);
  }
}

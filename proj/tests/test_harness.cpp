#include <doctest.h>

#include "mol/harness.hpp"

#include <cmath>
#include <set>

using namespace mol;

namespace {

// Dataset whose reference solutions are the model's own predictions.
OperatorDataset oracle_dataset(const DeepONet& model, Index count) {
  const PointCloud c = grid_cloud(ManifoldKind::Torus, 8, 8, 2.0, 1.0);
  DatasetConfig cfg;
  cfg.count = count;
  cfg.seed = 21;
  cfg.split = Split::Test;
  cfg.solve = false;
  OperatorDataset d = generate_dataset(c, make_sensor_grid(ManifoldKind::Torus, 2.0, 1.0, 3, 3), cfg);
  d.solutions = model.forward(d.kappa_sensors, d.cloud.points);
  return d;
}

NetworkConfig small_net() {
  NetworkConfig nc;
  nc.sensors = 9;
  nc.branch_hidden = {12};
  nc.latent = 6;
  nc.trunk_width = 12;
  nc.seed = 3;
  return nc;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("published table entries") {
    const std::pair<const char*, double> expected[] = {
        {"table1:linear:1000", 2.07},         {"table1:linear:500", 2.28},
        {"table1:linear:100", 3.03},          {"table1:exponential:1000", 2.29},
        {"table1:piecewise:1000", 2.56},      {"table1:quadratic:1000", 2.58},
        {"table1:mixed:1000", 2.67},          {"table2:dm:0:100", 3.03},
        {"table2:dm:0:25", 4.72},             {"table2:dm:0:10", 26.54},
        {"table2:dm:100:25", 2.87},           {"table2:dm:100:10", 4.83},
        {"table2:rbf:0:100", 2.89},           {"table2:rbf:0:25", 7.04},
        {"table2:rbf:0:10", 25.69},           {"table2:rbf:100:25", 2.66},
        {"table2:rbf:100:10", 3.04},          {"table3:gmls:0:25", 0.42},
        {"table3:gmls:0:10", 0.57},           {"table3:gmls:0:2", 6.17},
        {"table3:gmls:100:25", 0.39},         {"table3:gmls:100:10", 0.48},
        {"table3:gmls:100:2", 2.30},          {"table4:semilinear:0:10", 0.89},
        {"table4:semilinear:0:2", 1.33},      {"table4:semilinear:100:10", 0.69},
        {"table4:semilinear:100:2", 0.71},    {"table5:local-kernel:20x20:0.01:kappa", 7.10},
        {"table5:local-kernel:20x20:0.01:u", 1.87},  {"table5:local-kernel:20x20:0.05:kappa", 6.01},
        {"table5:local-kernel:20x20:0.05:u", 3.57},  {"table5:local-kernel:20x20:0.1:kappa", 11.18},
        {"table5:local-kernel:20x20:0.1:u", 6.11},   {"table5:local-kernel:50x50:0.01:kappa", 5.56},
        {"table5:local-kernel:50x50:0.01:u", 1.49},  {"table5:surrogate:20x20:0.01:kappa", 8.67},
        {"table5:surrogate:20x20:0.01:u", 3.88},     {"table5:surrogate:20x20:0.05:kappa", 7.18},
        {"table5:surrogate:20x20:0.05:u", 4.75},     {"table5:surrogate:20x20:0.1:kappa", 12.04},
        {"table5:surrogate:20x20:0.1:u", 7.46},      {"table5:surrogate:50x50:0.01:kappa", 7.24},
        {"table5:surrogate:50x50:0.01:u", 2.93},
    };
    for (const auto& [key, value] : expected) {
      INFO(key);
      const auto ref = table_reference(key);
      REQUIRE(ref.has_value());
      CHECK(ref->percent == value);
      CHECK(!ref->description.empty());
    }
    CHECK(table_references().size() == std::size(expected));
    std::set<std::string> keys;
    for (const TableReference& r : table_references()) keys.insert(r.key);
    CHECK(keys.size() == table_references().size());
    CHECK(!table_reference("table1:linear:999").has_value());
  }

  TEST_CASE("log-log slope") {
    const std::vector<double> n = {400, 900, 1600, 2500};
    std::vector<double> t;
    for (double x : n) t.push_back(3e-7 * std::pow(x, 2.25));
    CHECK(loglog_slope(n, t) == doctest::Approx(2.25).epsilon(1e-12));
    CHECK(loglog_slope({1.0, 2.0}, {5.0, 5.0}) == 0.0);
    CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), ParameterError);
    CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {1.0}), ShapeError);
    CHECK_THROWS_AS(loglog_slope({2.0, 2.0}, {1.0, 3.0}), ParameterError);
    CHECK_THROWS_AS(loglog_slope({1.0, 2.0}, {0.0, 3.0}), ParameterError);
  }

  TEST_CASE("repeated evaluation") {
    const DeepONet model(small_net());
    const OperatorDataset perfect = oracle_dataset(model, 6);
    const RepeatedEvaluation ev = evaluate_repeated(model, perfect, 3, 1);
    REQUIRE(ev.errors.size() == 3);
    CHECK(ev.mean == 0.0);

    // Orderings differ but the mean error does not.
    OperatorDataset noisy = perfect;
    noisy.solutions.array() += 0.1;
    const RepeatedEvaluation en = evaluate_repeated(model, noisy, 3, 1);
    CHECK(en.mean > 0.0);
    for (double e : en.errors) CHECK(e == doctest::Approx(en.mean).epsilon(1e-12));
    CHECK(en.mean == doctest::Approx(mean_l2_relative_error(model, noisy.cloud.points, observation_data(noisy))));

    CHECK_THROWS_AS(evaluate_repeated(model, perfect, 0, 1), ParameterError);
    NetworkConfig other = small_net();
    other.sensors = 16;
    CHECK_THROWS_AS(evaluate_repeated(DeepONet(other), perfect, 3, 1), ShapeError);
    OperatorDataset unsolved = perfect;
    unsolved.solutions.resize(0, 0);
    CHECK_THROWS_AS(evaluate_repeated(model, unsolved, 3, 1), ConfigError);
  }

  TEST_CASE("build identifier") { CHECK(std::string(build_id()).size() > 0); }
}

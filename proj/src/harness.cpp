#include "mol/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#ifndef MOL_BUILD_ID
#define MOL_BUILD_ID "unknown"
#endif

namespace mol {

const char* build_id() { return MOL_BUILD_ID; }

const std::vector<TableReference>& table_references() {
  static const std::vector<TableReference> refs = {
      {"table1:linear:1000", "DeepONet, linear kappa, N_OBS 1000", 2.07},
      {"table1:linear:500", "DeepONet, linear kappa, N_OBS 500", 2.28},
      {"table1:linear:100", "DeepONet, linear kappa, N_OBS 100", 3.03},
      {"table1:exponential:1000", "DeepONet, exponential kappa, N_OBS 1000", 2.29},
      {"table1:piecewise:1000", "DeepONet, piecewise linear kappa, N_OBS 1000", 2.56},
      {"table1:quadratic:1000", "DeepONet, quadratic kappa, N_OBS 1000", 2.58},
      {"table1:mixed:1000", "DeepONet, mixed kappa, N_OBS 1000", 2.67},
      {"table2:dm:0:100", "DM, DeepONet, N_OBS 100", 3.03},
      {"table2:dm:0:25", "DM, DeepONet, N_OBS 25", 4.72},
      {"table2:dm:0:10", "DM, DeepONet, N_OBS 10", 26.54},
      {"table2:dm:100:25", "DM, PI-DeepONet, N_PDE 100, N_OBS 25", 2.87},
      {"table2:dm:100:10", "DM, PI-DeepONet, N_PDE 100, N_OBS 10", 4.83},
      {"table2:rbf:0:100", "RBF, DeepONet, N_OBS 100", 2.89},
      {"table2:rbf:0:25", "RBF, DeepONet, N_OBS 25", 7.04},
      {"table2:rbf:0:10", "RBF, DeepONet, N_OBS 10", 25.69},
      {"table2:rbf:100:25", "RBF, PI-DeepONet, N_PDE 100, N_OBS 25", 2.66},
      {"table2:rbf:100:10", "RBF, PI-DeepONet, N_PDE 100, N_OBS 10", 3.04},
      {"table3:gmls:0:25", "semi-torus GMLS, DeepONet, N_OBS 25", 0.42},
      {"table3:gmls:0:10", "semi-torus GMLS, DeepONet, N_OBS 10", 0.57},
      {"table3:gmls:0:2", "semi-torus GMLS, DeepONet, N_OBS 2", 6.17},
      {"table3:gmls:100:25", "semi-torus GMLS, PI-DeepONet, N_PDE 100, N_OBS 25", 0.39},
      {"table3:gmls:100:10", "semi-torus GMLS, PI-DeepONet, N_PDE 100, N_OBS 10", 0.48},
      {"table3:gmls:100:2", "semi-torus GMLS, PI-DeepONet, N_PDE 100, N_OBS 2", 2.30},
      {"table4:semilinear:0:10", "semilinear DM, DeepONet, N_OBS 10", 0.89},
      {"table4:semilinear:0:2", "semilinear DM, DeepONet, N_OBS 2", 1.33},
      {"table4:semilinear:100:10", "semilinear DM, PI-DeepONet, N_PDE 100, N_OBS 10", 0.69},
      {"table4:semilinear:100:2", "semilinear DM, PI-DeepONet, N_PDE 100, N_OBS 2", 0.71},
      {"table5:local-kernel:20x20:0.01:kappa", "local kernel, sigma 0.01, kappa error", 7.10},
      {"table5:local-kernel:20x20:0.01:u", "local kernel, sigma 0.01, u error", 1.87},
      {"table5:local-kernel:20x20:0.05:kappa", "local kernel, sigma 0.05, kappa error", 6.01},
      {"table5:local-kernel:20x20:0.05:u", "local kernel, sigma 0.05, u error", 3.57},
      {"table5:local-kernel:20x20:0.1:kappa", "local kernel, sigma 0.1, kappa error", 11.18},
      {"table5:local-kernel:20x20:0.1:u", "local kernel, sigma 0.1, u error", 6.11},
      {"table5:local-kernel:50x50:0.01:kappa", "local kernel 50x50, sigma 0.01, kappa error", 5.56},
      {"table5:local-kernel:50x50:0.01:u", "local kernel 50x50, sigma 0.01, u error", 1.49},
      {"table5:surrogate:20x20:0.01:kappa", "PI-DeepONet, sigma 0.01, kappa error", 8.67},
      {"table5:surrogate:20x20:0.01:u", "PI-DeepONet, sigma 0.01, u error", 3.88},
      {"table5:surrogate:20x20:0.05:kappa", "PI-DeepONet, sigma 0.05, kappa error", 7.18},
      {"table5:surrogate:20x20:0.05:u", "PI-DeepONet, sigma 0.05, u error", 4.75},
      {"table5:surrogate:20x20:0.1:kappa", "PI-DeepONet, sigma 0.1, kappa error", 12.04},
      {"table5:surrogate:20x20:0.1:u", "PI-DeepONet, sigma 0.1, u error", 7.46},
      {"table5:surrogate:50x50:0.01:kappa", "PI-DeepONet 50x50, sigma 0.01, kappa error", 7.24},
      {"table5:surrogate:50x50:0.01:u", "PI-DeepONet 50x50, sigma 0.01, u error", 2.93},
  };
  return refs;
}

std::optional<TableReference> table_reference(const std::string& key) {
  for (const TableReference& r : table_references())
    if (r.key == key) return r;
  return std::nullopt;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("slope fit needs matching x and y");
  if (x.size() < 2) throw ParameterError("slope fit needs at least two points");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ParameterError("log-log fit needs positive values");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw ParameterError("slope fit needs distinct x values");
  return sxy / sxx;
}

RepeatedEvaluation evaluate_repeated(const DeepONet& model, const OperatorDataset& test, Index repeats,
                                     std::uint64_t seed) {
  if (repeats < 1) throw ParameterError("need at least one repetition");
  if (!test.has_solutions()) throw ConfigError("test dataset has no reference solutions");
  if (model.config().sensors != test.kappa_sensors.cols())
    throw ShapeError("checkpoint expects " + std::to_string(model.config().sensors) + " sensors, dataset has " +
                     std::to_string(test.kappa_sensors.cols()));
  RepeatedEvaluation out;
  std::vector<Index> order(static_cast<std::size_t>(test.count()));
  for (Index r = 0; r < repeats; ++r) {
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(derive_seed(seed, 0x6576616cULL, static_cast<std::uint64_t>(r)));
    std::shuffle(order.begin(), order.end(), rng);
    const OperatorDataset shuffled = permute_dataset(test, order);
    out.errors.push_back(mean_l2_relative_error(model, shuffled.cloud.points, observation_data(shuffled)));
  }
  out.mean = std::accumulate(out.errors.begin(), out.errors.end(), 0.0) / static_cast<double>(repeats);
  return out;
}

}  // namespace mol

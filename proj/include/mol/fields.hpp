#pragma once

// Random diffusion coefficients kappa(x, y), sensor grids, and datasets of
// (kappa, u) pairs generated with a meshfree forward solver.

#include "mol/core.hpp"
#include "mol/geometry.hpp"
#include "mol/io.hpp"
#include "mol/operators.hpp"
#include "mol/solvers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mol {

enum class KappaFamily { Linear, Exponential, PiecewiseLinear, Quadratic, GridSamples };

std::string to_string(KappaFamily f);
KappaFamily kappa_family_from_string(const std::string& name);

// The four closed-form families in the order Mixed datasets cycle through.
inline constexpr KappaFamily kClosedFormFamilies[4] = {KappaFamily::Linear, KappaFamily::Exponential,
                                                       KappaFamily::PiecewiseLinear, KappaFamily::Quadratic};

struct KappaCoefficients {
  double a = 0.0, b = 0.0, c = 0.0;
  double a1 = 0.0, b1 = 0.0, a2 = 0.0, b2 = 0.0;
};

// Values on an intrinsic (theta, phi) grid laid out like grid_cloud, read back
// by bilinear interpolation.
struct GridSamples {
  ManifoldKind kind = ManifoldKind::Torus;
  Index rows = 0, cols = 0;
  double major_radius = 2.0;
  Vector values;  // rows * cols, index a * cols + b
};

struct KappaField {
  KappaFamily family = KappaFamily::Linear;
  KappaCoefficients coeffs;
  std::optional<GridSamples> grid;
  std::uint64_t seed = 0;

  // Closed-form families only.
  double operator()(double x, double y) const;
};

// linear:      a x + b y + 6 + c
// exponential: a e^x + b e^y + c
// piecewise:   quadrant table with offset 10
// quadratic:   a1 x^2 + b1 y^2 + a2 x + b2 y + c
Vector evaluate(const KappaField& field, const Points& points);

struct UniformRange {
  double lo = 0.0, hi = 1.0;
};

struct KappaRanges {
  UniformRange linear_ab{-1.0, 1.0};
  UniformRange linear_c{-1.0, 1.0};
  UniformRange exponential_ab{0.0, 0.15};
  UniformRange exponential_c{1.0, 3.0};
  UniformRange piecewise{-1.0, 1.0};
  UniformRange quadratic_a1b1{-0.3, 0.3};
  UniformRange quadratic_a2b2{-1.0, 1.0};
  UniformRange quadratic_c{8.0, 12.0};
  double floor = 0.1;
  int max_rejections = 1000;
};

Json to_json(const KappaRanges& r);
KappaRanges kappa_ranges_from_json(const Json& j);

// Draws coefficients until min kappa over `domain` exceeds ranges.floor.
// ConfigError after max_rejections rejected draws.
KappaField sample_kappa(KappaFamily family, std::uint64_t seed, const Points& domain, const KappaRanges& ranges = {});

struct SensorGrid {
  PointCloud cloud;
  Index rows = 0, cols = 0;

  Index size() const { return cloud.size(); }
  const Points& locations() const { return cloud.points; }
};

// Equi-spaced in intrinsic coordinates; 26 x 26 by default.
SensorGrid make_sensor_grid(ManifoldKind kind, double R, double r, Index rows = 26, Index cols = 26);
// Sensors placed at the cloud points themselves (m = N).
SensorGrid sensors_at_points(const PointCloud& cloud);

// ------------------------------------------------------------------ datasets

enum class Split { Train, Test, Pde };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

// f = z + (x + y) / 3.
Vector default_rhs(const Points& points);

// Family of sample k for a Mixed dataset of `count` samples: equal quarters,
// remainder to the first families.
std::vector<KappaFamily> mixed_families(Index count);

struct DatasetConfig {
  Index count = 0;
  std::optional<KappaFamily> family;  // empty: Mixed
  Split split = Split::Train;
  std::uint64_t seed = 0;
  double c = 1.0;
  bool solve = true;  // false: kappa only (physics-loss samples)
  KappaRanges ranges;
  OperatorSettings operators;
  SolveOptions solver;
  double boundary_epsilon = 0.0;  // semi-torus only; 0 selects 2 x fill distance
};

struct OperatorDataset {
  PointCloud cloud;
  SensorGrid sensors;
  Matrix kappa_sensors;  // S x m
  Matrix kappa_points;   // S x N
  Matrix solutions;      // S x N, empty when not solved
  Vector rhs;
  double c = 1.0;
  std::optional<DirichletData> boundary;
  std::vector<KappaFamily> families;
  std::vector<std::uint64_t> seeds;
  std::vector<KappaCoefficients> coefficients;
  std::vector<double> residuals;
  Split split = Split::Train;
  Estimator estimator = Estimator::DM;
  Json manifest;

  Index count() const { return kappa_sensors.rows(); }
  bool has_solutions() const { return solutions.rows() > 0; }
};

// Per-sample seed: derive_seed(base, split stream, k), so Train/Test/Pde
// samples never share a kappa seed for the same base.
std::uint64_t sample_seed(std::uint64_t base, Split split, Index k);

OperatorDataset generate_dataset(const PointCloud& cloud, const SensorGrid& sensors, const DatasetConfig& config);

// Solves for given kappa samples (rows of kappa_points / kappa_sensors);
// config.count, family and ranges are ignored.
OperatorDataset dataset_from_kappa(const PointCloud& cloud, const SensorGrid& sensors, Matrix kappa_points,
                                   Matrix kappa_sensors, std::vector<KappaFamily> families,
                                   std::vector<std::uint64_t> seeds, const DatasetConfig& config);

// Reorders samples; family labels, seeds and residuals travel with their rows.
OperatorDataset permute_dataset(const OperatorDataset& data, const std::vector<Index>& order);

// Directory with kappa_sensors.csv, kappa_points.csv, solutions.csv,
// cloud.csv/cloud.json, sensors.csv/sensors.json and manifest.json.
void save_dataset(const OperatorDataset& data, const std::string& dir);
OperatorDataset load_dataset(const std::string& dir);

// Json helpers for operator and solver settings (shared with the CLI).
Json to_json(const OperatorSettings& s);
OperatorSettings operator_settings_from_json(const Json& j);

}  // namespace mol

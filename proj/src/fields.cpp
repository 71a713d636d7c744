#include "mol/fields.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

namespace mol {

namespace {

constexpr double kPi = std::numbers::pi;

double piecewise(const KappaCoefficients& k, double x, double y) {
  if (y <= 0.0) return k.a1 * x + k.b1 * y + 10.0;
  if (x <= 0.0) return k.a1 * x + k.b2 * y + 10.0;
  return k.a2 * x + k.b2 * y + 10.0;
}

double wrap(double t, double period) {
  t = std::fmod(t, period);
  return t < 0.0 ? t + period : t;
}

double grid_value(const GridSamples& g, double theta, double phi) {
  const double ta = wrap(theta, 2.0 * kPi) / (2.0 * kPi) * static_cast<double>(g.rows);
  const Index a0 = static_cast<Index>(std::floor(ta)) % g.rows;
  const Index a1 = (a0 + 1) % g.rows;
  const double wa = ta - std::floor(ta);

  Index b0, b1;
  double wb;
  if (g.kind == ManifoldKind::Torus) {
    const double tb = wrap(phi, 2.0 * kPi) / (2.0 * kPi) * static_cast<double>(g.cols);
    b0 = static_cast<Index>(std::floor(tb)) % g.cols;
    b1 = (b0 + 1) % g.cols;
    wb = tb - std::floor(tb);
  } else {
    if (g.cols == 1) {
      b0 = b1 = 0;
      wb = 0.0;
    } else {
      const double tb = std::clamp(phi, 0.0, kPi) / kPi * static_cast<double>(g.cols - 1);
      b0 = std::min<Index>(static_cast<Index>(std::floor(tb)), g.cols - 2);
      b1 = b0 + 1;
      wb = tb - static_cast<double>(b0);
    }
  }
  auto v = [&](Index a, Index b) { return g.values(a * g.cols + b); };
  return (1.0 - wa) * ((1.0 - wb) * v(a0, b0) + wb * v(a0, b1)) + wa * ((1.0 - wb) * v(a1, b0) + wb * v(a1, b1));
}

double draw(std::mt19937_64& rng, const UniformRange& r) {
  if (!(r.hi >= r.lo)) throw ConfigError("uniform range with hi < lo");
  if (r.hi == r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

KappaCoefficients draw_coefficients(KappaFamily family, std::mt19937_64& rng, const KappaRanges& r) {
  KappaCoefficients k;
  switch (family) {
    case KappaFamily::Linear:
      k.a = draw(rng, r.linear_ab);
      k.b = draw(rng, r.linear_ab);
      k.c = draw(rng, r.linear_c);
      break;
    case KappaFamily::Exponential:
      k.a = draw(rng, r.exponential_ab);
      k.b = draw(rng, r.exponential_ab);
      k.c = draw(rng, r.exponential_c);
      break;
    case KappaFamily::PiecewiseLinear:
      k.a1 = draw(rng, r.piecewise);
      k.b1 = draw(rng, r.piecewise);
      k.a2 = draw(rng, r.piecewise);
      k.b2 = draw(rng, r.piecewise);
      break;
    case KappaFamily::Quadratic:
      k.a1 = draw(rng, r.quadratic_a1b1);
      k.b1 = draw(rng, r.quadratic_a1b1);
      k.a2 = draw(rng, r.quadratic_a2b2);
      k.b2 = draw(rng, r.quadratic_a2b2);
      k.c = draw(rng, r.quadratic_c);
      break;
    case KappaFamily::GridSamples:
      throw ParameterError("grid-sample fields are not drawn from coefficient ranges");
  }
  return k;
}

Json range_json(const UniformRange& r) { return Json::array({r.lo, r.hi}); }
UniformRange range_from(const Json& j, const char* key, UniformRange fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("range ") + key + " must be [lo, hi]");
  return {v[0].get<double>(), v[1].get<double>()};
}

Json coeff_json(const KappaCoefficients& k) {
  return {{"a", k.a}, {"b", k.b}, {"c", k.c}, {"a1", k.a1}, {"b1", k.b1}, {"a2", k.a2}, {"b2", k.b2}};
}
KappaCoefficients coeff_from(const Json& j) {
  KappaCoefficients k;
  k.a = j.at("a").get<double>();
  k.b = j.at("b").get<double>();
  k.c = j.at("c").get<double>();
  k.a1 = j.at("a1").get<double>();
  k.b1 = j.at("b1").get<double>();
  k.a2 = j.at("a2").get<double>();
  k.b2 = j.at("b2").get<double>();
  return k;
}

std::uint64_t split_stream(Split s) {
  switch (s) {
    case Split::Train: return 0x747261696eULL;
    case Split::Test: return 0x74657374ULL;
    case Split::Pde: return 0x706465ULL;
  }
  return 0;
}

}  // namespace

std::string to_string(KappaFamily f) {
  switch (f) {
    case KappaFamily::Linear: return "linear";
    case KappaFamily::Exponential: return "exponential";
    case KappaFamily::PiecewiseLinear: return "piecewise";
    case KappaFamily::Quadratic: return "quadratic";
    case KappaFamily::GridSamples: return "grid";
  }
  return "linear";
}

KappaFamily kappa_family_from_string(const std::string& name) {
  if (name == "linear") return KappaFamily::Linear;
  if (name == "exponential") return KappaFamily::Exponential;
  if (name == "piecewise" || name == "piecewise-linear") return KappaFamily::PiecewiseLinear;
  if (name == "quadratic" || name == "nonlinear") return KappaFamily::Quadratic;
  if (name == "grid") return KappaFamily::GridSamples;
  throw ConfigError("unknown kappa family: " + name);
}

double KappaField::operator()(double x, double y) const {
  const KappaCoefficients& k = coeffs;
  switch (family) {
    case KappaFamily::Linear: return k.a * x + k.b * y + 6.0 + k.c;
    case KappaFamily::Exponential: return k.a * std::exp(x) + k.b * std::exp(y) + k.c;
    case KappaFamily::PiecewiseLinear: return piecewise(k, x, y);
    case KappaFamily::Quadratic: return k.a1 * x * x + k.b1 * y * y + k.a2 * x + k.b2 * y + k.c;
    case KappaFamily::GridSamples: break;
  }
  throw ParameterError("grid-sample fields need full coordinates; use evaluate()");
}

Vector evaluate(const KappaField& field, const Points& points) {
  Vector out(points.rows());
  if (field.family == KappaFamily::GridSamples) {
    if (!field.grid) throw ParameterError("grid-sample field without grid values");
    const GridSamples& g = *field.grid;
    if (g.rows < 1 || g.cols < 1 || g.values.size() != g.rows * g.cols) throw ShapeError("grid values do not match the grid shape");
    for (Index i = 0; i < points.rows(); ++i) {
      const Eigen::Vector3d p = points.row(i).transpose();
      const Eigen::Vector2d t = torus_intrinsic(p, g.major_radius);
      out(i) = grid_value(g, t(0), t(1));
    }
    return out;
  }
  for (Index i = 0; i < points.rows(); ++i) out(i) = field(points(i, 0), points(i, 1));
  return out;
}

Json to_json(const KappaRanges& r) {
  return {{"linear_ab", range_json(r.linear_ab)},
          {"linear_c", range_json(r.linear_c)},
          {"exponential_ab", range_json(r.exponential_ab)},
          {"exponential_c", range_json(r.exponential_c)},
          {"piecewise", range_json(r.piecewise)},
          {"quadratic_a1b1", range_json(r.quadratic_a1b1)},
          {"quadratic_a2b2", range_json(r.quadratic_a2b2)},
          {"quadratic_c", range_json(r.quadratic_c)},
          {"floor", r.floor},
          {"max_rejections", r.max_rejections}};
}

KappaRanges kappa_ranges_from_json(const Json& j) {
  KappaRanges r;
  r.linear_ab = range_from(j, "linear_ab", r.linear_ab);
  r.linear_c = range_from(j, "linear_c", r.linear_c);
  r.exponential_ab = range_from(j, "exponential_ab", r.exponential_ab);
  r.exponential_c = range_from(j, "exponential_c", r.exponential_c);
  r.piecewise = range_from(j, "piecewise", r.piecewise);
  r.quadratic_a1b1 = range_from(j, "quadratic_a1b1", r.quadratic_a1b1);
  r.quadratic_a2b2 = range_from(j, "quadratic_a2b2", r.quadratic_a2b2);
  r.quadratic_c = range_from(j, "quadratic_c", r.quadratic_c);
  r.floor = j.value("floor", r.floor);
  r.max_rejections = j.value("max_rejections", r.max_rejections);
  return r;
}

KappaField sample_kappa(KappaFamily family, std::uint64_t seed, const Points& domain, const KappaRanges& ranges) {
  if (ranges.max_rejections < 1) throw ConfigError("max_rejections must be positive");
  std::mt19937_64 rng(seed);
  KappaField field;
  field.family = family;
  field.seed = seed;
  for (int attempt = 0; attempt < ranges.max_rejections; ++attempt) {
    field.coeffs = draw_coefficients(family, rng, ranges);
    const Vector v = evaluate(field, domain);
    if (v.size() == 0 || v.minCoeff() > ranges.floor) return field;
  }
  std::ostringstream msg;
  msg << "no positive " << to_string(family) << " kappa (min > " << ranges.floor << ") after " << ranges.max_rejections
      << " draws with seed " << seed << "; check the coefficient ranges";
  throw ConfigError(msg.str());
}

SensorGrid make_sensor_grid(ManifoldKind kind, double R, double r, Index rows, Index cols) {
  SensorGrid g;
  g.cloud = grid_cloud(kind, rows, cols, R, r);
  g.rows = rows;
  g.cols = cols;
  return g;
}

SensorGrid sensors_at_points(const PointCloud& cloud) {
  SensorGrid g;
  g.cloud = cloud;
  g.rows = cloud.size();
  g.cols = 1;
  return g;
}

// ------------------------------------------------------------------ datasets

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Pde: return "pde";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  if (name == "pde") return Split::Pde;
  throw ConfigError("unknown split: " + name);
}

Vector default_rhs(const Points& points) {
  return points.col(2) + (points.col(0) + points.col(1)) / 3.0;
}

std::vector<KappaFamily> mixed_families(Index count) {
  std::vector<KappaFamily> out;
  out.reserve(static_cast<std::size_t>(std::max<Index>(count, 0)));
  const Index base = count / 4, extra = count % 4;
  for (Index f = 0; f < 4; ++f)
    for (Index k = 0; k < base + (f < extra ? 1 : 0); ++k) out.push_back(kClosedFormFamilies[f]);
  return out;
}

std::uint64_t sample_seed(std::uint64_t base, Split split, Index k) {
  return derive_seed(base, split_stream(split), static_cast<std::uint64_t>(k));
}

namespace {

std::optional<DirichletData> dataset_boundary(const PointCloud& cloud, double requested, double* used) {
  *used = 0.0;
  if (!cloud.has_boundary()) return std::nullopt;
  *used = requested > 0.0 ? requested : default_boundary_epsilon(cloud);
  DirichletData bc;
  bc.split = split_near_boundary(cloud, *used);
  bc.g_tilde = Vector::Zero(cloud.size());
  return bc;
}

}  // namespace

OperatorDataset generate_dataset(const PointCloud& cloud, const SensorGrid& sensors, const DatasetConfig& config) {
  if (config.count < 1) throw ParameterError("dataset needs at least one sample");
  if (config.family && *config.family == KappaFamily::GridSamples)
    throw ParameterError("datasets draw from the closed-form families");

  const Index n = cloud.size(), m = sensors.size(), s = config.count;
  std::vector<KappaFamily> families = config.family ? std::vector<KappaFamily>(static_cast<std::size_t>(s), *config.family)
                                                    : mixed_families(s);
  Points domain(n + m, 3);
  domain << cloud.points, sensors.locations();

  Matrix kappa_sensors(s, m), kappa_points(s, n);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(s));
  std::vector<KappaCoefficients> coefficients(static_cast<std::size_t>(s));
  for (Index k = 0; k < s; ++k) {
    const std::uint64_t seed = sample_seed(config.seed, config.split, k);
    const KappaField field = sample_kappa(families[static_cast<std::size_t>(k)], seed, domain, config.ranges);
    seeds[static_cast<std::size_t>(k)] = seed;
    coefficients[static_cast<std::size_t>(k)] = field.coeffs;
    kappa_points.row(k) = evaluate(field, cloud.points).transpose();
    kappa_sensors.row(k) = evaluate(field, sensors.locations()).transpose();
  }
  OperatorDataset data = dataset_from_kappa(cloud, sensors, std::move(kappa_points), std::move(kappa_sensors),
                                            std::move(families), std::move(seeds), config);
  data.coefficients = std::move(coefficients);
  Json coeffs = Json::array();
  for (const KappaCoefficients& c : data.coefficients) coeffs.push_back(coeff_json(c));
  data.manifest["coefficients"] = coeffs;
  data.manifest["family"] = config.family ? to_string(*config.family) : std::string("mixed");
  return data;
}

OperatorDataset dataset_from_kappa(const PointCloud& cloud, const SensorGrid& sensors, Matrix kappa_points,
                                   Matrix kappa_sensors, std::vector<KappaFamily> families,
                                   std::vector<std::uint64_t> seeds, const DatasetConfig& config) {
  if (!(config.c > 0.0)) throw ParameterError("c must be positive");
  const Index n = cloud.size(), m = sensors.size(), s = kappa_points.rows();
  if (s < 1) throw ParameterError("dataset needs at least one sample");
  if (kappa_points.cols() != n || kappa_sensors.rows() != s || kappa_sensors.cols() != m ||
      static_cast<Index>(families.size()) != s || static_cast<Index>(seeds.size()) != s)
    throw ShapeError("kappa samples do not match the cloud, sensors or labels");
  if (!(kappa_points.array() > 0.0).all() || !(kappa_sensors.array() > 0.0).all())
    throw ParameterError("kappa samples must be positive");

  OperatorDataset data;
  data.cloud = cloud;
  data.sensors = sensors;
  data.split = config.split;
  data.estimator = config.operators.estimator;
  data.c = config.c;
  data.rhs = default_rhs(cloud.points);
  data.families = std::move(families);
  data.seeds = std::move(seeds);
  data.kappa_points = std::move(kappa_points);
  data.kappa_sensors = std::move(kappa_sensors);
  data.coefficients.assign(static_cast<std::size_t>(s), KappaCoefficients{});
  data.residuals.assign(static_cast<std::size_t>(s), 0.0);
  double boundary_eps = 0.0;
  data.boundary = dataset_boundary(cloud, config.boundary_epsilon, &boundary_eps);

  double epsilon_used = 0.0;
  if (config.solve) {
    const OperatorFactory factory(cloud.points, config.operators);
    epsilon_used = factory.epsilon();
    data.solutions.resize(s, n);
    const Vector cvec = Vector::Constant(n, config.c);
    parallel_for(s, [&](Index k) {
      const Vector kappa = data.kappa_points.row(k).transpose();
      const DiscreteOperator op = factory.build(kappa);
      ForwardProblem problem{&op, cvec, data.rhs, data.boundary};
      SolveReport rep;
      try {
        rep = solve(problem, config.solver);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << "forward solve failed for sample " << k << " (kappa seed " << data.seeds[static_cast<std::size_t>(k)]
            << "): " << e.what();
        throw SolverError(msg.str());
      }
      data.solutions.row(k) = rep.solution.transpose();
      data.residuals[static_cast<std::size_t>(k)] = rep.residual_norm;
    });
  }

  Json fams = Json::array(), sd = Json::array(), coeffs = Json::array();
  for (Index k = 0; k < s; ++k) {
    fams.push_back(to_string(data.families[static_cast<std::size_t>(k)]));
    sd.push_back(data.seeds[static_cast<std::size_t>(k)]);
    coeffs.push_back(coeff_json(data.coefficients[static_cast<std::size_t>(k)]));
  }
  data.manifest = {{"split", to_string(config.split)},
                   {"count", s},
                   {"family", "grid"},
                   {"base_seed", config.seed},
                   {"c", config.c},
                   {"rhs", "z + (x + y) / 3"},
                   {"solved", config.solve},
                   {"estimator", to_string(config.operators.estimator)},
                   {"operators", to_json(config.operators)},
                   {"dm_epsilon_used", epsilon_used},
                   {"boundary_epsilon", boundary_eps},
                   {"ranges", to_json(config.ranges)},
                   {"sensor_rows", sensors.rows},
                   {"sensor_cols", sensors.cols},
                   {"families", fams},
                   {"seeds", sd},
                   {"coefficients", coeffs},
                   {"residuals", data.residuals}};
  return data;
}

OperatorDataset permute_dataset(const OperatorDataset& data, const std::vector<Index>& order) {
  const Index s = data.count();
  if (static_cast<Index>(order.size()) != s) throw ShapeError("permutation length differs from the sample count");
  std::vector<bool> seen(static_cast<std::size_t>(s), false);
  for (Index k : order) {
    if (k < 0 || k >= s || seen[static_cast<std::size_t>(k)]) throw ParameterError("not a permutation");
    seen[static_cast<std::size_t>(k)] = true;
  }
  OperatorDataset out = data;
  Json families = Json::array(), seeds = Json::array(), coeffs = Json::array(), residuals = Json::array();
  for (Index j = 0; j < s; ++j) {
    const Index k = order[static_cast<std::size_t>(j)];
    const auto ks = static_cast<std::size_t>(k), js = static_cast<std::size_t>(j);
    out.kappa_sensors.row(j) = data.kappa_sensors.row(k);
    out.kappa_points.row(j) = data.kappa_points.row(k);
    if (data.has_solutions()) out.solutions.row(j) = data.solutions.row(k);
    out.families[js] = data.families[ks];
    out.seeds[js] = data.seeds[ks];
    out.coefficients[js] = data.coefficients[ks];
    out.residuals[js] = data.residuals[ks];
    families.push_back(to_string(out.families[js]));
    seeds.push_back(out.seeds[js]);
    coeffs.push_back(coeff_json(out.coefficients[js]));
    residuals.push_back(out.residuals[js]);
  }
  out.manifest["families"] = families;
  out.manifest["seeds"] = seeds;
  out.manifest["coefficients"] = coeffs;
  out.manifest["residuals"] = residuals;
  return out;
}

void save_dataset(const OperatorDataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const fs::path p(dir);
  write_matrix_csv((p / "kappa_sensors.csv").string(), data.kappa_sensors);
  write_matrix_csv((p / "kappa_points.csv").string(), data.kappa_points);
  if (data.has_solutions()) write_matrix_csv((p / "solutions.csv").string(), data.solutions);
  save_cloud(data.cloud, (p / "cloud.csv").string(), (p / "cloud.json").string());
  save_cloud(data.sensors.cloud, (p / "sensors.csv").string(), (p / "sensors.json").string());
  write_json((p / "manifest.json").string(), data.manifest);
}

OperatorDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path p(dir);
  if (!fs::is_directory(p)) throw IoError("dataset directory not found: " + dir);
  OperatorDataset data;
  data.manifest = read_json((p / "manifest.json").string());
  const Json& mf = data.manifest;
  data.cloud = load_cloud((p / "cloud.csv").string(), (p / "cloud.json").string());
  data.sensors.cloud = load_cloud((p / "sensors.csv").string(), (p / "sensors.json").string());
  data.sensors.rows = mf.at("sensor_rows").get<Index>();
  data.sensors.cols = mf.at("sensor_cols").get<Index>();
  data.kappa_sensors = read_matrix_csv((p / "kappa_sensors.csv").string());
  data.kappa_points = read_matrix_csv((p / "kappa_points.csv").string());
  if (mf.at("solved").get<bool>()) data.solutions = read_matrix_csv((p / "solutions.csv").string());
  data.split = split_from_string(mf.at("split").get<std::string>());
  data.estimator = estimator_from_string(mf.at("estimator").get<std::string>());
  data.c = mf.at("c").get<double>();
  data.rhs = default_rhs(data.cloud.points);

  const Index s = mf.at("count").get<Index>();
  if (data.kappa_sensors.rows() != s || data.kappa_points.rows() != s ||
      (data.has_solutions() && data.solutions.rows() != s))
    throw IoError("dataset matrices disagree with the manifest count");
  if (data.kappa_sensors.cols() != data.sensors.size() || data.kappa_points.cols() != data.cloud.size() ||
      (data.has_solutions() && data.solutions.cols() != data.cloud.size()))
    throw IoError("dataset matrices disagree with the cloud or sensor sizes");
  for (const Json& f : mf.at("families")) data.families.push_back(kappa_family_from_string(f.get<std::string>()));
  for (const Json& v : mf.at("seeds")) data.seeds.push_back(v.get<std::uint64_t>());
  for (const Json& v : mf.at("coefficients")) data.coefficients.push_back(coeff_from(v));
  for (const Json& v : mf.at("residuals")) data.residuals.push_back(v.get<double>());

  const double beps = mf.value("boundary_epsilon", 0.0);
  if (data.cloud.has_boundary() && beps > 0.0) {
    DirichletData bc;
    bc.split = split_near_boundary(data.cloud, beps);
    bc.g_tilde = Vector::Zero(data.cloud.size());
    data.boundary = std::move(bc);
  }
  return data;
}

Json to_json(const OperatorSettings& s) {
  return {{"estimator", to_string(s.estimator)},
          {"dm_neighbors", s.dm_neighbors},
          {"dm_epsilon", s.dm_epsilon},
          {"dm_epsilon_scale", s.dm_epsilon_scale},
          {"intrinsic_dim", s.intrinsic_dim},
          {"rbf_shape", s.rbf.shape},
          {"rbf_pinv_tol", s.rbf.pinv_tol},
          {"rbf_max_points", s.rbf.max_points},
          {"rbf_frames", s.rbf.frames == FrameMethod::Pca ? "pca" : "quadratic"},
          {"gmls_stencil", s.gmls_stencil},
          {"gmls_degree", s.gmls_degree},
          {"gmls_stabilize", s.gmls_stabilize}};
}

OperatorSettings operator_settings_from_json(const Json& j) {
  OperatorSettings s;
  s.estimator = estimator_from_string(j.value("estimator", std::string("dm")));
  s.dm_neighbors = j.value("dm_neighbors", s.dm_neighbors);
  s.dm_epsilon = j.value("dm_epsilon", s.dm_epsilon);
  s.dm_epsilon_scale = j.value("dm_epsilon_scale", s.dm_epsilon_scale);
  s.intrinsic_dim = j.value("intrinsic_dim", s.intrinsic_dim);
  s.rbf.shape = j.value("rbf_shape", s.rbf.shape);
  s.rbf.pinv_tol = j.value("rbf_pinv_tol", s.rbf.pinv_tol);
  s.rbf.max_points = j.value("rbf_max_points", s.rbf.max_points);
  const std::string frames = j.value("rbf_frames", std::string("quadratic"));
  if (frames != "pca" && frames != "quadratic") throw ConfigError("unknown frame method: " + frames);
  s.rbf.frames = frames == "pca" ? FrameMethod::Pca : FrameMethod::Quadratic;
  s.gmls_stencil = j.value("gmls_stencil", s.gmls_stencil);
  s.gmls_degree = j.value("gmls_degree", s.gmls_degree);
  s.gmls_stabilize = j.value("gmls_stabilize", s.gmls_stabilize);
  return s;
}

}  // namespace mol

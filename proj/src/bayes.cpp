#include "mol/bayes.hpp"

#include "mol/solvers.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace mol {

std::string to_string(KlExponent e) { return e == KlExponent::Printed ? "printed" : "consistent"; }

KlExponent kl_exponent_from_string(const std::string& name) {
  if (name == "consistent" || name == "half") return KlExponent::Consistent;
  if (name == "printed" || name == "full") return KlExponent::Printed;
  throw ConfigError("unknown KL exponent: " + name);
}

std::string to_string(ForwardKind k) {
  switch (k) {
    case ForwardKind::Surrogate: return "surrogate";
    case ForwardKind::LocalKernel: return "local-kernel";
    case ForwardKind::None: return "none";
  }
  return "none";
}

ForwardKind forward_kind_from_string(const std::string& name) {
  if (name == "surrogate") return ForwardKind::Surrogate;
  if (name == "local-kernel" || name == "local_kernel") return ForwardKind::LocalKernel;
  if (name == "none") return ForwardKind::None;
  throw ConfigError("unknown forward map: " + name);
}

// --------------------------------------------------------------------- prior

namespace {

void finish_prior(GaussianPrior& prior, const Matrix& laplacian) {
  if (!(prior.tau > 0.0)) throw ParameterError("tau must be positive");
  if (!(prior.s > 0.0)) throw ParameterError("s must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> es(laplacian);
  if (es.info() != Eigen::Success) throw NumericalError("graph Laplacian eigendecomposition failed");
  prior.eigenvalues = es.eigenvalues();
  prior.eigenvectors = es.eigenvectors();
  const Index n = prior.eigenvalues.size();
  const double lmax = std::max(1.0, prior.eigenvalues.cwiseAbs().maxCoeff());
  prior.disconnected = n > 1 && prior.eigenvalues(1) < 1e-10 * lmax;

  const Vector shifted = (prior.eigenvalues.array() + prior.tau).matrix();
  if (!(shifted.array() > 0.0).all()) throw NumericalError("tau + lambda_i must be positive");
  const double denom = shifted.array().pow(-prior.s).sum();
  prior.c_n = static_cast<double>(n) / denom;
  const double e = prior.exponent == KlExponent::Consistent ? 0.5 * prior.s : prior.s;
  prior.coefficients = std::sqrt(prior.c_n) * shifted.array().pow(-e).matrix();
}

}  // namespace

GaussianPrior build_prior(const Points& points, const PriorOptions& options) {
  const Index n = points.rows();
  if (n < 2) throw ParameterError("prior needs at least two points");
  if (options.neighbors < 2) throw ParameterError("prior graph needs at least one neighbour");
  if (!(options.s > 0.5 * options.intrinsic_dim)) throw ParameterError("s must exceed d / 2");
  if (!(options.tau > 0.0)) throw ParameterError("tau must be positive");

  const NeighborIndex knn = build_knn(points, std::min(options.neighbors, n));
  double eps_g = options.epsilon_g;
  if (!(eps_g > 0.0)) eps_g = 4.0 * tune_epsilon(knn, default_epsilon_grid()).chosen_epsilon;

  Matrix w = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index r = 1; r < knn.k; ++r) {
      const Index j = knn.indices(i, r);
      if (j == i) continue;
      const double a = std::exp(-knn.distances(i, r) / eps_g);
      w(i, j) += 0.5 * a;
      w(j, i) += 0.5 * a;
    }
  Matrix lap = -w;
  lap.diagonal() = w.rowwise().sum();

  GaussianPrior prior;
  prior.tau = options.tau;
  prior.s = options.s;
  prior.exponent = options.exponent;
  prior.epsilon_g = eps_g;
  prior.graph_laplacian = lap.sparseView();
  finish_prior(prior, lap);
  return prior;
}

GaussianPrior prior_from_laplacian(const Matrix& laplacian, double tau, double s, KlExponent exponent) {
  if (laplacian.rows() != laplacian.cols() || laplacian.rows() < 1) throw ShapeError("Laplacian must be square");
  GaussianPrior prior;
  prior.tau = tau;
  prior.s = s;
  prior.exponent = exponent;
  prior.graph_laplacian = laplacian.sparseView();
  finish_prior(prior, laplacian);
  return prior;
}

Vector prior_from_xi(const GaussianPrior& prior, const Vector& xi) {
  if (xi.size() != prior.size()) throw ShapeError("xi length differs from the prior size");
  return prior.eigenvectors * prior.coefficients.cwiseProduct(xi);
}

Vector sample_prior(const GaussianPrior& prior, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector xi(prior.size());
  for (Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
  return prior_from_xi(prior, xi);
}

Vector sample_prior(const GaussianPrior& prior, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_prior(prior, rng);
}

Matrix prior_covariance(const GaussianPrior& prior) {
  const Matrix scaled = prior.eigenvectors * prior.coefficients.asDiagonal();
  return scaled * scaled.transpose();
}

// -------------------------------------------------------------- forward maps

LocalKernelSetup make_local_kernel_setup(const Points& points, double epsilon_scale) {
  if (!(epsilon_scale > 0.0)) throw ParameterError("epsilon scale must be positive");
  LocalKernelSetup setup;
  setup.points = points;
  setup.neighbors = default_dm_neighbors(points.rows());
  const NeighborIndex knn = build_knn(points, setup.neighbors);
  setup.epsilon = epsilon_scale * tune_epsilon(knn, default_epsilon_grid()).chosen_epsilon;
  setup.f = default_rhs(points);
  return setup;
}

Vector forward_local_kernel(const Vector& alpha, const LocalKernelSetup& setup) {
  const Index n = setup.points.rows();
  if (alpha.size() != n) throw ShapeError("alpha length differs from the cloud size");
  if (!alpha.allFinite()) throw ParameterError("alpha must be finite");
  const Vector kappa = alpha.array().exp().matrix();
  const Index k = setup.neighbors > 0 ? std::min(setup.neighbors, n) : default_dm_neighbors(n);
  const NeighborIndex knn = build_knn(setup.points, k);
  const DiscreteOperator op = build_dm_operator(setup.points, knn, kappa, setup.epsilon, setup.intrinsic_dim);
  return solve_linear(op, setup.c, setup.f).solution;
}

Vector forward_surrogate(const DeepONet& model, const Vector& alpha, const Points& points) {
  if (model.config().sensors != alpha.size() || alpha.size() != points.rows())
    throw ConfigError("surrogate sensors must coincide with the cloud points (no interpolation rule configured)");
  return model.forward(Vector(alpha.array().exp().matrix()), points);
}

// ----------------------------------------------------------------------- pCN

double misfit(const ObservationModel& obs, const Vector& predicted) {
  if (!(obs.sigma > 0.0)) throw ParameterError("sigma must be positive");
  if (predicted.size() != obs.data.size()) throw ShapeError("prediction length differs from the data");
  return 0.5 * (obs.data - predicted).squaredNorm() / (obs.sigma * obs.sigma);
}

PcnStep pcn_step(const PcnState& current, const GaussianPrior& prior, double beta, const ForwardMap& forward,
                 const ObservationModel* obs, std::mt19937_64& rng) {
  if (!(beta > 0.0 && beta < 1.0)) throw ParameterError("beta must lie in (0, 1)");
  if (current.alpha.size() != prior.size()) throw ShapeError("state length differs from the prior size");
  const Vector gamma = sample_prior(prior, rng);
  PcnStep out;
  out.state.alpha = std::sqrt(1.0 - beta * beta) * current.alpha + beta * gamma;
  if (forward && obs) {
    out.state.misfit = misfit(*obs, forward(out.state.alpha));
    const double log_a = current.misfit - out.state.misfit;
    out.accept_probability = log_a >= 0.0 ? 1.0 : std::exp(log_a);
  }
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  out.accepted = u < out.accept_probability;
  if (!out.accepted) out.state = current;
  return out;
}

PcnStep pcn_step(const PcnState& current, const GaussianPrior& prior, double beta, const ForwardMap& forward,
                 const ObservationModel* obs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return pcn_step(current, prior, beta, forward, obs, rng);
}

double relative_l2(const Vector& estimate, const Vector& truth) {
  if (estimate.size() != truth.size()) throw ShapeError("relative error of vectors with different lengths");
  const double d = truth.norm();
  if (!(d > 0.0)) throw NumericalError("relative error against a zero reference");
  return (estimate - truth).norm() / d;
}

InversionResult run_inversion(const GaussianPrior& prior, const ObservationModel& obs, const ForwardMap& forward,
                              ForwardKind kind, const InversionConfig& config, const LocalKernelSetup* reconstruct) {
  if (!(config.beta > 0.0 && config.beta < 1.0)) throw ParameterError("beta must lie in (0, 1)");
  if (config.iterations < 1 || config.burn_in < 0 || config.thin < 1) throw ConfigError("invalid chain length");
  const Index stored = config.iterations > config.burn_in ? (config.iterations - config.burn_in) / config.thin : 0;
  if (stored == 0) throw ConfigError("chain stores no samples (iterations <= burn-in)");
  if (kind != ForwardKind::None && !forward) throw ConfigError("forward map not configured");

  const Index n = prior.size();
  const ForwardMap active = kind == ForwardKind::None ? ForwardMap{} : forward;
  InversionResult res;
  res.forward = kind;
  PcnState state{Vector::Zero(n), 0.0};
  if (active) state.misfit = misfit(obs, active(state.alpha));

  std::mt19937_64 rng(config.seed);
  Vector mean = Vector::Zero(n), m2 = Vector::Zero(n), alpha_sum = Vector::Zero(n);
  if (config.keep_samples) res.samples.resize(n, stored);
  Index count = 0;
  double seconds = 0.0;
  res.misfit_trace.reserve(static_cast<std::size_t>(config.iterations));
  for (Index it = 1; it <= config.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    PcnStep step = pcn_step(state, prior, config.beta, active, active ? &obs : nullptr, rng);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (step.accepted) ++res.accepted;
    state = std::move(step.state);
    res.misfit_trace.push_back(state.misfit);
    if (it > config.burn_in && (it - config.burn_in) % config.thin == 0 && count < stored) {
      const Vector kappa = state.alpha.array().exp().matrix();
      ++count;
      const Vector delta = kappa - mean;
      mean += delta / static_cast<double>(count);
      m2 += delta.cwiseProduct(kappa - mean);
      alpha_sum += state.alpha;
      if (config.keep_samples) res.samples.col(count - 1) = state.alpha;
    }
  }
  res.stored = count;
  res.kappa_mean = mean;
  res.kappa_std = (m2 / static_cast<double>(count)).cwiseMax(0.0).cwiseSqrt();
  res.alpha_mean = alpha_sum / static_cast<double>(count);
  res.acceptance_rate = static_cast<double>(res.accepted) / static_cast<double>(config.iterations);
  res.seconds_per_step = seconds / static_cast<double>(config.iterations);
  if (obs.truth_kappa) res.kappa_error = relative_l2(res.kappa_mean, *obs.truth_kappa);
  if (reconstruct) {
    res.u_bar = forward_local_kernel(Vector(res.kappa_mean.array().log().matrix()), *reconstruct);
    if (obs.truth_solution) res.u_error = relative_l2(res.u_bar, *obs.truth_solution);
  }
  return res;
}

// ------------------------------------------------------------ synthetic setup

std::uint64_t truth_seed(std::uint64_t base) { return derive_seed(base, 0x7472757468ULL, 0); }

SyntheticProblem make_synthetic_problem(const GaussianPrior& prior, const LocalKernelSetup& setup, double sigma,
                                        std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  SyntheticProblem p;
  p.alpha_true = sample_prior(prior, truth_seed(seed));
  p.kappa_true = p.alpha_true.array().exp().matrix();
  p.u_true = forward_local_kernel(p.alpha_true, setup);
  std::mt19937_64 rng(derive_seed(seed, 0x6e6f697365ULL, 0));
  std::normal_distribution<double> normal(0.0, sigma);
  p.observation.data = p.u_true;
  for (Index i = 0; i < p.observation.data.size(); ++i) p.observation.data(i) += normal(rng);
  p.observation.sigma = sigma;
  p.observation.seed = seed;
  p.observation.truth_kappa = p.kappa_true;
  p.observation.truth_solution = p.u_true;
  return p;
}

OperatorDataset generate_prior_dataset(const PointCloud& cloud, const GaussianPrior& prior,
                                       const DatasetConfig& config) {
  if (config.count < 1) throw ParameterError("dataset needs at least one sample");
  if (prior.size() != cloud.size()) throw ShapeError("prior size differs from the cloud size");
  const Index n = cloud.size(), s = config.count;
  Matrix kappa(s, n);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(s));
  for (Index k = 0; k < s; ++k) {
    seeds[static_cast<std::size_t>(k)] = sample_seed(config.seed, config.split, k);
    kappa.row(k) = sample_prior(prior, seeds[static_cast<std::size_t>(k)]).array().exp().matrix().transpose();
  }
  std::vector<KappaFamily> families(static_cast<std::size_t>(s), KappaFamily::GridSamples);
  Matrix sensors = kappa;
  OperatorDataset data = dataset_from_kappa(cloud, sensors_at_points(cloud), std::move(kappa), std::move(sensors),
                                            std::move(families), std::move(seeds), config);
  data.manifest["prior"] = {{"tau", prior.tau},
                            {"s", prior.s},
                            {"c_n", prior.c_n},
                            {"epsilon_g", prior.epsilon_g},
                            {"exponent", to_string(prior.exponent)}};
  return data;
}

}  // namespace mol

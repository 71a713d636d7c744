// mol: point clouds, datasets, DeepONet training/evaluation, pCN inversion and
// timing benchmarks from the command line.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

#include "mol/bayes.hpp"
#include "mol/fields.hpp"
#include "mol/geometry.hpp"
#include "mol/harness.hpp"
#include "mol/io.hpp"
#include "mol/network.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mol;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

// Flat dotted-key settings: every option is bound to a key; a --config JSON
// file supplies values for keys whose flag was not given on the command line.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with flat dotted keys (or a report with a config echo)");
  }

  template <class T>
  CLI::Option* add(const std::string& flag, const std::string& key, T& var, const std::string& help) {
    CLI::Option* o = app_->add_option(flag, var, help)->capture_default_str();
    bind(o, key, var);
    return o;
  }

  CLI::Option* flag(const std::string& flag, const std::string& key, bool& var, const std::string& help) {
    CLI::Option* o = app_->add_flag(flag, var, help);
    bind(o, key, var);
    return o;
  }

  // Config-file-only key holding a JSON object.
  void object(const std::string& key, Json& var) {
    bindings_.push_back({nullptr, key, [&var](const Json& j) { var = j; }, [&var] { return var; }});
  }

  void resolve() {
    if (config_path_.empty()) return;
    Json file = read_json(config_path_);
    if (file.contains("config") && file["config"].is_object()) file = file["config"];
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    for (auto it = file.begin(); it != file.end(); ++it) {
      bool known = false;
      for (const Binding& b : bindings_) known = known || b.key == it.key();
      if (!known) throw ConfigError("unknown config key: " + it.key());
    }
    for (const Binding& b : bindings_) {
      if (b.option && b.option->count() > 0) continue;
      if (file.contains(b.key)) {
        try {
          b.load(file[b.key]);
        } catch (const Json::exception& e) {
          throw ConfigError("bad value for " + b.key + ": " + e.what());
        }
      }
    }
  }

  Json echo() const {
    Json j = Json::object();
    for (const Binding& b : bindings_) j[b.key] = b.dump();
    return j;
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::function<void(const Json&)> load;
    std::function<Json()> dump;
  };

  template <class T>
  void bind(CLI::Option* o, const std::string& key, T& var) {
    bindings_.push_back({o, key, [&var](const Json& j) { var = j.get<T>(); }, [&var] { return Json(var); }});
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Binding> bindings_;
};

struct Report {
  std::string command;
  Json config;
  Json metrics = Json::object();
  Json timings = Json::object();
  Json artifacts = Json::object();
  std::string status = "ok";
  std::string message;

  Json to_json() const {
    for (auto it = artifacts.begin(); it != artifacts.end(); ++it)
      if (!fs::exists(it.value().get<std::string>()))
        throw IoError("report references a missing artifact: " + it.value().get<std::string>());
    return {{"command", command}, {"status", status},   {"message", message}, {"metrics", metrics},
            {"timings", timings}, {"config", config},   {"artifacts", artifacts},
            {"build", build_id()}};
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// x,y,z,value per point.
void write_field_csv(const std::string& path, const Points& points, const Vector& values) {
  std::ostringstream out;
  out << "x,y,z,value\n";
  for (Index i = 0; i < points.rows(); ++i)
    out << format_double(points(i, 0)) << ',' << format_double(points(i, 1)) << ',' << format_double(points(i, 2))
        << ',' << format_double(values(i)) << '\n';
  write_text(path, out.str());
}

std::vector<Index> parse_index_list(const std::string& text) {
  std::vector<Index> out;
  for (const std::string& tok : split(text, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(static_cast<Index>(std::stoll(tok)));
    } catch (const std::exception&) {
      throw ConfigError("not an integer list: " + text);
    }
  }
  return out;
}

// ---------------------------------------------------------------- clouds

struct CloudOptions {
  std::string path;  // directory with cloud.csv / cloud.json
  std::string manifold = "torus";
  std::string layout = "random";
  Index n = 2500;
  double R = 2.0, r = 1.0;
  std::uint64_t seed = 0;

  void add(Settings& s) {
    s.add("--cloud", "cloud.path", path, "Directory holding cloud.csv and cloud.json");
    s.add("--manifold", "cloud.manifold", manifold, "torus | semi-torus");
    s.add("--N", "cloud.N", n, "Number of cloud points");
    s.add("--layout", "cloud.layout", layout, "random | grid (grid needs a square N)");
    s.add("--R", "cloud.R", R, "Major radius");
    s.add("--r", "cloud.r", r, "Minor radius");
    s.add("--cloud-seed", "cloud.seed", seed, "Seed for random clouds");
  }

  PointCloud make() const {
    if (!path.empty()) return load_cloud(join(path, "cloud.csv"), join(path, "cloud.json"));
    return make_for(n);
  }

  PointCloud make_for(Index count) const {
    const ManifoldKind kind = manifold_from_string(manifold);
    if (count < 4) throw ConfigError("cloud needs at least 4 points");
    if (layout == "grid") {
      const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(count))));
      if (side * side != count) throw ConfigError("grid layout needs a square N, got " + std::to_string(count));
      return grid_cloud(kind, side, side, R, r);
    }
    if (layout != "random") throw ConfigError("unknown cloud layout: " + layout);
    return sample_cloud(kind, count, R, r, seed);
  }
};

struct PriorCli {
  Index neighbors = 16;
  double tau = 0.08, s = 6.0, epsilon_g = 0.0;
  std::string exponent = "consistent";

  void add(Settings& st) {
    st.add("--prior-neighbors", "prior.neighbors", neighbors, "Prior graph neighbours");
    st.add("--prior-tau", "prior.tau", tau, "Prior tau");
    st.add("--prior-s", "prior.s", s, "Prior exponent s");
    st.add("--prior-epsilon", "prior.epsilon_g", epsilon_g, "Prior edge bandwidth (0: 4 x tuned DM bandwidth)");
    st.add("--prior-kl", "prior.exponent", exponent, "consistent (-s/2) | printed (-s)");
  }

  PriorOptions options() const {
    PriorOptions o;
    o.neighbors = neighbors;
    o.tau = tau;
    o.s = s;
    o.epsilon_g = epsilon_g;
    o.exponent = kl_exponent_from_string(exponent);
    return o;
  }
};

// ------------------------------------------------------------ generate-cloud

struct CloudCmd {
  CloudOptions cloud;
  std::string out;
};

int run_generate_cloud(CloudCmd& c, Settings& s) {
  s.resolve();
  ensure_dir(c.out);
  const auto t0 = std::chrono::steady_clock::now();
  const PointCloud cloud = c.cloud.make();
  Report rep{"generate-cloud", s.echo()};
  save_cloud(cloud, join(c.out, "cloud.csv"), join(c.out, "cloud.json"));
  rep.metrics = {{"N", cloud.size()}, {"fill_distance_estimate", estimate_fill_distance(cloud)}};
  rep.timings["total_seconds"] = seconds_since(t0);
  rep.artifacts = {{"cloud", join(c.out, "cloud.csv")}, {"cloud_manifest", join(c.out, "cloud.json")}};
  write_json(join(c.out, "report.json"), rep.to_json());
  return 0;
}

// ------------------------------------------------------------------ generate

struct GenerateCmd {
  CloudOptions cloud;
  PriorCli prior;
  std::string family = "linear";
  Index count = 100;
  std::string split = "train";
  std::uint64_t seed = 0;
  double c = 1.0;
  bool solve = true;
  std::string estimator = "dm";
  double dm_epsilon_scale = 1.0;
  Index sensor_rows = 26, sensor_cols = 26;
  bool sensors_at_points = false;
  double boundary_epsilon = 0.0;
  Json ranges = Json::object();
  std::string out;
};

int run_generate(GenerateCmd& g, Settings& s) {
  s.resolve();
  if (g.count < 1) throw ConfigError("--n-obs must be positive");
  if (g.out.empty()) throw ConfigError("--out is required");
  const auto t0 = std::chrono::steady_clock::now();
  const PointCloud cloud = g.cloud.make();

  DatasetConfig cfg;
  cfg.count = g.count;
  cfg.split = split_from_string(g.split);
  cfg.seed = g.seed;
  cfg.c = g.c;
  cfg.solve = g.solve;
  cfg.ranges = kappa_ranges_from_json(g.ranges);
  cfg.operators.estimator = estimator_from_string(g.estimator);
  cfg.operators.dm_epsilon_scale = g.dm_epsilon_scale;
  cfg.boundary_epsilon = g.boundary_epsilon;

  OperatorDataset data;
  if (g.family == "prior") {
    const GaussianPrior prior = build_prior(cloud.points, g.prior.options());
    data = generate_prior_dataset(cloud, prior, cfg);
  } else {
    if (g.family != "mixed") cfg.family = kappa_family_from_string(g.family);
    const SensorGrid sensors = g.sensors_at_points
                                   ? sensors_at_points(cloud)
                                   : make_sensor_grid(cloud.kind, cloud.major_radius, cloud.minor_radius,
                                                      g.sensor_rows, g.sensor_cols);
    data = generate_dataset(cloud, sensors, cfg);
  }
  const double gen_seconds = seconds_since(t0);

  const bool existed = fs::exists(g.out);
  try {
    ensure_dir(g.out);
    save_dataset(data, g.out);
    Report rep{"generate", s.echo()};
    rep.metrics = {{"count", data.count()},
                   {"N", cloud.size()},
                   {"sensors", data.kappa_sensors.cols()},
                   {"solved", data.has_solutions()}};
    if (!data.residuals.empty())
      rep.metrics["max_residual"] = *std::max_element(data.residuals.begin(), data.residuals.end());
    rep.timings["generate_seconds"] = gen_seconds;
    rep.artifacts = {{"manifest", join(g.out, "manifest.json")}, {"kappa_sensors", join(g.out, "kappa_sensors.csv")}};
    write_json(join(g.out, "report.json"), rep.to_json());
  } catch (...) {
    if (!existed) fs::remove_all(g.out);
    throw;
  }
  return 0;
}

// --------------------------------------------------------------------- train

struct TrainCmd {
  std::string mode = "deeponet";
  std::string dataset, pde_dataset, test_dataset;
  Index epochs = 20000;
  std::uint64_t seed = 0;
  double lr = 1e-3, decay_r = 0.5, decay_steps = 20000.0;
  Index log_every = 100;
  bool keep_best = true;
  double w_obs = 1.0, w_pde = -1.0, w_bc = -1.0;
  std::string branch_hidden = "128,128";
  Index trunk_depth = 3, trunk_width = 32, latent = 32;
  bool conv_branch = false;
  std::string out;
};

OperatorSettings settings_for(const OperatorDataset& data) {
  OperatorSettings os = operator_settings_from_json(data.manifest.value("operators", Json::object()));
  const double eps = data.manifest.value("dm_epsilon_used", 0.0);
  if (os.estimator == Estimator::DM && eps > 0.0) {
    os.dm_epsilon = eps;
    os.dm_epsilon_scale = 1.0;
  }
  return os;
}

int run_train(TrainCmd& t, Settings& s) {
  s.resolve();
  if (t.dataset.empty()) throw ConfigError("--dataset is required");
  if (!fs::exists(t.dataset)) throw ConfigError("dataset not found: " + t.dataset);
  const bool physics = t.mode == "pi-deeponet";
  if (!physics && t.mode != "deeponet") throw ConfigError("unknown mode: " + t.mode);
  if (physics && t.pde_dataset.empty()) throw ConfigError("pi-deeponet needs --pde-dataset");
  if (physics && !fs::exists(t.pde_dataset)) throw ConfigError("PDE dataset not found: " + t.pde_dataset);
  ensure_dir(t.out);

  const auto t0 = std::chrono::steady_clock::now();
  const OperatorDataset train_set = load_dataset(t.dataset);
  if (!train_set.has_solutions()) throw ConfigError("training dataset has no solutions");
  const ObservationData obs = observation_data(train_set);

  std::optional<PhysicsData> pde;
  Estimator estimator = train_set.estimator;
  if (physics) {
    const OperatorDataset pde_set = load_dataset(t.pde_dataset);
    if (pde_set.cloud.size() != train_set.cloud.size() || pde_set.kappa_sensors.cols() != obs.kappa_sensors.cols())
      throw ShapeError("PDE dataset does not match the training dataset");
    const OperatorSettings os = settings_for(pde_set);
    estimator = os.estimator;
    pde = physics_data(pde_set, std::make_shared<const OperatorFactory>(pde_set.cloud.points, os));
  }

  NetworkConfig nc;
  nc.sensors = obs.kappa_sensors.cols();
  nc.branch_hidden = parse_index_list(t.branch_hidden);
  nc.trunk_depth = t.trunk_depth;
  nc.trunk_width = t.trunk_width;
  nc.latent = t.latent;
  nc.conv_branch = t.conv_branch;
  nc.sensor_rows = train_set.sensors.rows;
  nc.sensor_cols = train_set.sensors.cols;
  nc.seed = t.seed;

  TrainingConfig tc;
  const LossWeights defaults = default_loss_weights(estimator);
  tc.weights.obs = t.w_obs;
  tc.weights.pde = physics ? (t.w_pde >= 0.0 ? t.w_pde : defaults.pde) : 0.0;
  tc.weights.bc = physics ? (t.w_bc >= 0.0 ? t.w_bc : defaults.bc) : 0.0;
  tc.lr0 = t.lr;
  tc.decay_r = t.decay_r;
  tc.decay_steps = t.decay_steps;
  tc.epochs = t.epochs;
  tc.log_every = t.log_every;
  tc.keep_best = t.keep_best;
  tc.seed = t.seed;
  const double load_seconds = seconds_since(t0);

  const auto t1 = std::chrono::steady_clock::now();
  const TrainResult res = train(DeepONet(nc), train_set.cloud.points, &obs, pde ? &*pde : nullptr, tc);
  const double train_seconds = seconds_since(t1);

  const std::string ckpt = join(t.out, "model.ckpt"), hist = join(t.out, "history.csv");
  save_checkpoint(res.model, ckpt, {{"mode", t.mode}, {"dataset", t.dataset}, {"training", to_json(tc)}});
  write_history_csv(hist, res.history);

  Report rep{"train", s.echo()};
  rep.metrics = {{"best_epoch", res.best_epoch},
                 {"epochs_run", res.epochs_run},
                 {"num_params", res.model.num_params()},
                 {"weights", {{"obs", tc.weights.obs}, {"pde", tc.weights.pde}, {"bc", tc.weights.bc}}},
                 {"train_error", mean_l2_relative_error(res.model, train_set.cloud.points, obs)}};
  if (!res.history.empty()) {
    const LossBundle& l = res.history.back().loss;
    rep.metrics["final_loss"] = {{"obs", l.obs}, {"pde", l.pde}, {"bc", l.bc}, {"total", l.total}};
  }
  if (!t.test_dataset.empty()) {
    const OperatorDataset test = load_dataset(t.test_dataset);
    rep.metrics["test_error"] = mean_l2_relative_error(res.model, test.cloud.points, observation_data(test));
  }
  rep.timings = {{"load_seconds", load_seconds},
                 {"train_seconds", train_seconds},
                 {"seconds_per_epoch", train_seconds / static_cast<double>(std::max<Index>(1, res.epochs_run))}};
  rep.artifacts = {{"checkpoint", ckpt}, {"history", hist}};
  if (res.diverged) {
    rep.status = "diverged";
    rep.message = res.message;
  }
  write_json(join(t.out, "report.json"), rep.to_json());
  if (res.diverged) {
    std::cerr << "training diverged: " << res.message << " (last finite parameters saved)\n";
    return kExitNumerical;
  }
  return 0;
}

// ---------------------------------------------------------------------- eval

struct EvalCmd {
  std::string checkpoint, dataset, table_ref, out;
  Index repeats = 3;
  std::uint64_t seed = 0;
};

int run_eval(EvalCmd& e, Settings& s) {
  s.resolve();
  if (e.checkpoint.empty() || e.dataset.empty()) throw ConfigError("--checkpoint and --dataset are required");
  if (!fs::exists(e.checkpoint)) throw ConfigError("checkpoint not found: " + e.checkpoint);
  if (!fs::exists(e.dataset)) throw ConfigError("dataset not found: " + e.dataset);
  std::optional<TableReference> ref;
  if (!e.table_ref.empty()) {
    ref = table_reference(e.table_ref);
    if (!ref) throw ConfigError("unknown table reference: " + e.table_ref);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const DeepONet model = load_checkpoint(e.checkpoint);
  const OperatorDataset test = load_dataset(e.dataset);
  const RepeatedEvaluation ev = evaluate_repeated(model, test, e.repeats, e.seed);

  Report rep{"eval", s.echo()};
  rep.metrics = {{"mean_l2_relative_error", ev.mean},
                 {"mean_l2_relative_error_percent", 100.0 * ev.mean},
                 {"repeat_errors", ev.errors},
                 {"test_count", test.count()}};
  if (ref)
    rep.metrics["table_ref"] = {{"key", ref->key},
                                {"description", ref->description},
                                {"target_percent", ref->percent},
                                {"difference_percent", 100.0 * ev.mean - ref->percent}};
  rep.timings["total_seconds"] = seconds_since(t0);
  const Json j = rep.to_json();
  if (e.out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    const fs::path p(e.out);
    if (p.has_parent_path()) ensure_dir(p.parent_path().string());
    write_json(e.out, j);
  }
  return 0;
}

// -------------------------------------------------------------------- invert

struct InvertCmd {
  CloudOptions cloud;
  PriorCli prior;
  std::string forward = "local-kernel";
  std::string checkpoint, data, table_ref, out;
  double sigma = 0.01, beta = 0.02;
  Index iterations = 7000, burn_in = 2000, thin = 1;
  std::uint64_t seed = 0, truth_seed = 0;
  bool save_samples = false;
};

int run_invert(InvertCmd& v, Settings& s) {
  s.resolve();
  const ForwardKind kind = forward_kind_from_string(v.forward);
  if (kind == ForwardKind::Surrogate && v.checkpoint.empty()) throw ConfigError("surrogate forward needs --checkpoint");
  if (kind == ForwardKind::Surrogate && !fs::exists(v.checkpoint))
    throw ConfigError("checkpoint not found: " + v.checkpoint);
  ensure_dir(v.out);

  const auto t0 = std::chrono::steady_clock::now();
  const PointCloud cloud = v.cloud.make();
  const GaussianPrior prior = build_prior(cloud.points, v.prior.options());
  const LocalKernelSetup setup = make_local_kernel_setup(cloud.points);
  ObservationModel obs;
  if (v.data.empty()) {
    obs = make_synthetic_problem(prior, setup, v.sigma, v.truth_seed).observation;
  } else {
    const Matrix m = read_matrix_csv(v.data);
    if (m.size() != cloud.size()) throw ShapeError("observation file length differs from the cloud size");
    obs.data = Eigen::Map<const Vector>(m.data(), m.size());
    obs.sigma = v.sigma;
  }
  if (!obs.data.allFinite()) throw ConfigError("observations must be finite");

  std::optional<DeepONet> model;
  ForwardMap forward;
  if (kind == ForwardKind::Surrogate) {
    model = load_checkpoint(v.checkpoint);
    if (model->config().sensors != cloud.size())
      throw ConfigError("surrogate sensors must coincide with the cloud points");
    forward = [&](const Vector& a) { return forward_surrogate(*model, a, cloud.points); };
  } else if (kind == ForwardKind::LocalKernel) {
    forward = [&](const Vector& a) { return forward_local_kernel(a, setup); };
  }
  const double setup_seconds = seconds_since(t0);

  InversionConfig ic;
  ic.beta = v.beta;
  ic.iterations = v.iterations;
  ic.burn_in = v.burn_in;
  ic.thin = v.thin;
  ic.seed = v.seed;
  ic.keep_samples = v.save_samples;
  const InversionResult res = run_inversion(prior, obs, forward, kind, ic, &setup);

  Report rep{"invert", s.echo()};
  rep.metrics = {{"acceptance_rate", res.acceptance_rate},
                 {"accepted", res.accepted},
                 {"stored_samples", res.stored},
                 {"per_step_seconds", res.seconds_per_step},
                 {"prior_c_n", prior.c_n},
                 {"prior_epsilon_g", prior.epsilon_g},
                 {"prior_disconnected", prior.disconnected},
                 {"forward", to_string(kind)}};
  if (obs.truth_kappa) {
    rep.metrics["kappa_error"] = res.kappa_error;
    rep.metrics["u_error"] = res.u_error;
  }
  if (!v.table_ref.empty()) {
    const auto ref = table_reference(v.table_ref);
    if (!ref) throw ConfigError("unknown table reference: " + v.table_ref);
    rep.metrics["table_ref"] = {{"key", ref->key}, {"description", ref->description}, {"target_percent", ref->percent}};
  }
  rep.timings = {{"setup_seconds", setup_seconds},
                 {"per_step_seconds", res.seconds_per_step},
                 {"chain_seconds", res.seconds_per_step * static_cast<double>(v.iterations)}};

  write_field_csv(join(v.out, "kappa_mean.csv"), cloud.points, res.kappa_mean);
  write_field_csv(join(v.out, "kappa_std.csv"), cloud.points, res.kappa_std);
  write_field_csv(join(v.out, "u_bar.csv"), cloud.points, res.u_bar);
  write_matrix_csv(join(v.out, "misfit_trace.csv"),
                   Eigen::Map<const Vector>(res.misfit_trace.data(), static_cast<Index>(res.misfit_trace.size())));
  rep.artifacts = {{"kappa_mean", join(v.out, "kappa_mean.csv")},
                   {"kappa_std", join(v.out, "kappa_std.csv")},
                   {"u_bar", join(v.out, "u_bar.csv")},
                   {"misfit_trace", join(v.out, "misfit_trace.csv")}};
  if (obs.truth_kappa) {
    write_field_csv(join(v.out, "kappa_true.csv"), cloud.points, *obs.truth_kappa);
    rep.artifacts["kappa_true"] = join(v.out, "kappa_true.csv");
  }
  if (v.save_samples) {
    write_matrix_csv(join(v.out, "samples.csv"), res.samples.transpose());
    rep.artifacts["samples"] = join(v.out, "samples.csv");
  }
  write_json(join(v.out, "summary.json"), rep.to_json());
  return 0;
}

// --------------------------------------------------------------------- bench

struct BenchCmd {
  CloudOptions cloud;
  PriorCli prior;
  std::string sizes = "400,900,1600,2500";
  std::string checkpoint_dir, out;
  bool train_quick = false;
  Index steps = 20, surrogate_steps = 200;
  double sigma = 0.01, beta = 0.02;
  std::uint64_t seed = 0;
};

DeepONet quick_surrogate(const PointCloud& cloud, const GaussianPrior& prior, std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.count = 4;
  cfg.seed = seed;
  const OperatorDataset data = generate_prior_dataset(cloud, prior, cfg);
  const ObservationData obs = observation_data(data);
  NetworkConfig nc;
  nc.sensors = cloud.size();
  nc.seed = seed;
  TrainingConfig tc;
  tc.epochs = 10;
  tc.log_every = 10;
  return train(DeepONet(nc), cloud.points, &obs, nullptr, tc).model;
}

int run_bench(BenchCmd& b, Settings& s) {
  s.resolve();
  const std::vector<Index> sizes = parse_index_list(b.sizes);
  if (sizes.size() < 3) throw ConfigError("bench needs at least three N values to fit a slope");
  if (b.checkpoint_dir.empty() && !b.train_quick) throw ConfigError("bench needs --checkpoint-dir or --train-quick");
  if (b.steps < 1 || b.surrogate_steps < 1) throw ConfigError("step counts must be positive");
  ensure_dir(b.out);

  std::ostringstream csv;
  csv << "N,method,seconds_per_step\n";
  std::vector<double> ns, t_local, t_sur;
  Json per_n = Json::array();
  for (Index n : sizes) {
    const PointCloud cloud = b.cloud.make_for(n);
    const GaussianPrior prior = build_prior(cloud.points, b.prior.options());
    const LocalKernelSetup setup = make_local_kernel_setup(cloud.points);
    const SyntheticProblem problem = make_synthetic_problem(prior, setup, b.sigma, b.seed);

    DeepONet model;
    if (!b.checkpoint_dir.empty()) {
      const std::string path = join(b.checkpoint_dir, "surrogate_" + std::to_string(n) + ".ckpt");
      if (!fs::exists(path)) throw ConfigError("missing checkpoint " + path);
      model = load_checkpoint(path);
      if (model.config().sensors != n) throw ConfigError("checkpoint " + path + " does not match N");
    } else {
      model = quick_surrogate(cloud, prior, b.seed);
    }

    InversionConfig ic;
    ic.beta = b.beta;
    ic.seed = b.seed;
    ic.burn_in = 0;
    ic.iterations = b.steps;
    const ForwardMap local = [&](const Vector& a) { return forward_local_kernel(a, setup); };
    const double lk = run_inversion(prior, problem.observation, local, ForwardKind::LocalKernel, ic).seconds_per_step;
    ic.iterations = b.surrogate_steps;
    const ForwardMap sur = [&](const Vector& a) { return forward_surrogate(model, a, cloud.points); };
    const double su = run_inversion(prior, problem.observation, sur, ForwardKind::Surrogate, ic).seconds_per_step;

    csv << n << ",local-kernel," << format_double(lk) << '\n' << n << ",surrogate," << format_double(su) << '\n';
    ns.push_back(static_cast<double>(n));
    t_local.push_back(lk);
    t_sur.push_back(su);
    per_n.push_back({{"N", n}, {"local_kernel", lk}, {"surrogate", su}});
    std::cerr << "N=" << n << " local-kernel " << lk << " s/step, surrogate " << su << " s/step\n";
  }
  const std::string csv_path = join(b.out, "timings.csv");
  write_text(csv_path, csv.str());

  Report rep{"bench", s.echo()};
  const double sl = loglog_slope(ns, t_local), ss = loglog_slope(ns, t_sur);
  rep.metrics = {{"slope_local_kernel", sl},
                 {"slope_surrogate", ss},
                 {"surrogate_slope_smaller", ss < sl},
                 {"per_N", per_n}};
  rep.artifacts = {{"timings", csv_path}};
  write_json(join(b.out, "report.json"), rep.to_json());
  return 0;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Json::exception& e) {
    std::cerr << "malformed JSON: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meshfree PDE solvers, DeepONet surrogates and pCN inversion on point-cloud manifolds"};
  app.require_subcommand(1);
  std::function<int()> action;

  CloudCmd cc;
  CLI::App* sc = app.add_subcommand("generate-cloud", "Sample a point cloud");
  Settings scs(sc);
  cc.cloud.add(scs);
  scs.add("--out", "out", cc.out, "Output directory");
  sc->callback([&] { action = [&] { return run_generate_cloud(cc, scs); }; });

  GenerateCmd gc;
  CLI::App* sg = app.add_subcommand("generate", "Generate a (kappa, u) dataset");
  Settings sgs(sg);
  gc.cloud.add(sgs);
  gc.prior.add(sgs);
  sgs.add("--family", "kappa.family", gc.family, "linear | exponential | piecewise | quadratic | mixed | prior");
  sgs.add("--n-obs,--count", "dataset.count", gc.count, "Number of samples");
  sgs.add("--split", "dataset.split", gc.split, "train | test | pde");
  sgs.add("--seed", "dataset.seed", gc.seed, "Base seed for kappa draws");
  sgs.add("--c", "dataset.c", gc.c, "Reaction coefficient c");
  sgs.flag("--solve,!--no-solve", "dataset.solve", gc.solve, "Solve for u (off for physics-loss samples)");
  sgs.add("--estimator", "operator.estimator", gc.estimator, "dm | rbf | gmls");
  sgs.add("--dm-epsilon-scale", "operator.dm_epsilon_scale", gc.dm_epsilon_scale, "Multiplier on the tuned bandwidth");
  sgs.add("--sensor-rows", "sensors.rows", gc.sensor_rows, "Sensor grid rows");
  sgs.add("--sensor-cols", "sensors.cols", gc.sensor_cols, "Sensor grid columns");
  sgs.flag("--sensors-at-points", "sensors.at_points", gc.sensors_at_points, "Use the cloud points as sensors");
  sgs.add("--boundary-epsilon", "dataset.boundary_epsilon", gc.boundary_epsilon,
          "Near-boundary width on the semi-torus (0: 2 x fill distance)");
  sgs.object("kappa.ranges", gc.ranges);
  sgs.add("--out", "out", gc.out, "Output dataset directory");
  sg->callback([&] { action = [&] { return run_generate(gc, sgs); }; });

  TrainCmd tc;
  CLI::App* st = app.add_subcommand("train", "Train a DeepONet or PI-DeepONet");
  Settings sts(st);
  sts.add("--mode", "train.mode", tc.mode, "deeponet | pi-deeponet");
  sts.add("--dataset", "train.dataset", tc.dataset, "Training dataset directory");
  sts.add("--pde-dataset", "train.pde_dataset", tc.pde_dataset, "Physics-loss dataset directory");
  sts.add("--test-dataset", "train.test_dataset", tc.test_dataset, "Optional held-out dataset");
  sts.add("--epochs", "train.epochs", tc.epochs, "Epochs");
  sts.add("--seed", "train.seed", tc.seed, "Initialisation seed");
  sts.add("--lr", "train.lr", tc.lr, "Initial learning rate");
  sts.add("--decay-r", "train.decay_r", tc.decay_r, "Inverse-time decay rate r");
  sts.add("--decay-steps", "train.decay_steps", tc.decay_steps, "Inverse-time decay steps S");
  sts.add("--log-every", "train.log_every", tc.log_every, "History cadence in epochs");
  sts.flag("--keep-best,!--keep-last", "train.keep_best", tc.keep_best, "Return the lowest-loss parameters");
  sts.add("--w-obs", "loss.w_obs", tc.w_obs, "Observation loss weight");
  sts.add("--w-pde", "loss.w_pde", tc.w_pde, "PDE loss weight (negative: estimator default)");
  sts.add("--w-bc", "loss.w_bc", tc.w_bc, "Boundary loss weight (negative: estimator default)");
  sts.add("--branch-hidden", "net.branch_hidden", tc.branch_hidden, "Comma-separated branch widths");
  sts.add("--trunk-depth", "net.trunk_depth", tc.trunk_depth, "Trunk hidden layers");
  sts.add("--trunk-width", "net.trunk_width", tc.trunk_width, "Trunk width");
  sts.add("--latent", "net.latent", tc.latent, "Latent dimension p");
  sts.flag("--conv-branch", "net.conv_branch", tc.conv_branch, "Convolutional branch front end");
  sts.add("--out", "out", tc.out, "Output directory");
  st->callback([&] { action = [&] { return run_train(tc, sts); }; });

  EvalCmd ec;
  CLI::App* se = app.add_subcommand("eval", "Evaluate a checkpoint on a test dataset");
  Settings ses(se);
  ses.add("--checkpoint", "eval.checkpoint", ec.checkpoint, "Checkpoint file");
  ses.add("--dataset", "eval.dataset", ec.dataset, "Test dataset directory");
  ses.add("--repeats", "eval.repeats", ec.repeats, "Evaluation repetitions");
  ses.add("--seed", "eval.seed", ec.seed, "Seed for test orderings");
  ses.add("--table-ref", "eval.table_ref", ec.table_ref, "Published table entry, e.g. table1:linear:1000");
  ses.add("--out", "out", ec.out, "Report path (stdout when empty)");
  se->callback([&] { action = [&] { return run_eval(ec, ses); }; });

  InvertCmd ic;
  ic.cloud.layout = "grid";
  ic.cloud.n = 400;
  CLI::App* si = app.add_subcommand("invert", "Recover kappa with graph pCN");
  Settings sis(si);
  ic.cloud.add(sis);
  ic.prior.add(sis);
  sis.add("--forward", "invert.forward", ic.forward, "local-kernel | surrogate | none");
  sis.add("--checkpoint", "invert.checkpoint", ic.checkpoint, "Surrogate checkpoint");
  sis.add("--data", "invert.data", ic.data, "Observation CSV (synthetic truth when empty)");
  sis.add("--sigma", "invert.sigma", ic.sigma, "Noise standard deviation");
  sis.add("--beta", "invert.beta", ic.beta, "pCN step size");
  sis.add("--iters", "invert.iterations", ic.iterations, "Total pCN steps");
  sis.add("--burn-in", "invert.burn_in", ic.burn_in, "Discarded steps");
  sis.add("--thin", "invert.thin", ic.thin, "Thinning");
  sis.add("--seed", "invert.seed", ic.seed, "Chain seed");
  sis.add("--truth-seed", "invert.truth_seed", ic.truth_seed, "Seed of the synthetic truth and noise");
  sis.flag("--save-samples", "invert.save_samples", ic.save_samples, "Write stored alpha samples");
  sis.add("--table-ref", "invert.table_ref", ic.table_ref, "Published table entry to attach");
  sis.add("--out", "out", ic.out, "Output directory");
  si->callback([&] { action = [&] { return run_invert(ic, sis); }; });

  BenchCmd bc;
  bc.cloud.layout = "grid";
  CLI::App* sb = app.add_subcommand("bench", "Per-step pCN timings for both forward maps");
  Settings sbs(sb);
  bc.cloud.add(sbs);
  bc.prior.add(sbs);
  sbs.add("--sizes", "bench.sizes", bc.sizes, "Comma-separated N values");
  sbs.add("--checkpoint-dir", "bench.checkpoint_dir", bc.checkpoint_dir, "Directory with surrogate_<N>.ckpt");
  sbs.flag("--train-quick", "bench.train_quick", bc.train_quick, "Train a small surrogate per N instead");
  sbs.add("--steps", "bench.steps", bc.steps, "Local-kernel steps per N");
  sbs.add("--surrogate-steps", "bench.surrogate_steps", bc.surrogate_steps, "Surrogate steps per N");
  sbs.add("--sigma", "bench.sigma", bc.sigma, "Noise level of the synthetic data");
  sbs.add("--beta", "bench.beta", bc.beta, "pCN step size");
  sbs.add("--seed", "bench.seed", bc.seed, "Seed");
  sbs.add("--out", "out", bc.out, "Output directory");
  sb->callback([&] { action = [&] { return run_bench(bc, sbs); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return guarded(action);
}

#include "mol/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace mol {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Gelu: return gelu(x);
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Gelu: return gelu_derivative(x);
  }
  return 1.0;
}

Index conv_out(Index n) { return n < 3 ? 0 : (n - 3) / 2 + 1; }

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_derivative(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Json to_json(const NetworkConfig& c) {
  return {{"sensors", c.sensors},
          {"branch_hidden", c.branch_hidden},
          {"conv_branch", c.conv_branch},
          {"sensor_rows", c.sensor_rows},
          {"sensor_cols", c.sensor_cols},
          {"conv_channels1", c.conv_channels1},
          {"conv_channels2", c.conv_channels2},
          {"trunk_depth", c.trunk_depth},
          {"trunk_width", c.trunk_width},
          {"latent", c.latent},
          {"seed", c.seed}};
}

NetworkConfig network_config_from_json(const Json& j) {
  NetworkConfig c;
  c.sensors = j.value("sensors", c.sensors);
  if (j.contains("branch_hidden")) c.branch_hidden = j.at("branch_hidden").get<std::vector<Index>>();
  c.conv_branch = j.value("conv_branch", c.conv_branch);
  c.sensor_rows = j.value("sensor_rows", c.sensor_rows);
  c.sensor_cols = j.value("sensor_cols", c.sensor_cols);
  c.conv_channels1 = j.value("conv_channels1", c.conv_channels1);
  c.conv_channels2 = j.value("conv_channels2", c.conv_channels2);
  c.trunk_depth = j.value("trunk_depth", c.trunk_depth);
  c.trunk_width = j.value("trunk_width", c.trunk_width);
  c.latent = j.value("latent", c.latent);
  c.seed = j.value("seed", c.seed);
  return c;
}

// --------------------------------------------------------------------- model

DeepONet::DeepONet(const NetworkConfig& config) : config_(config) {
  if (config.sensors < 1 || config.latent < 1) throw ParameterError("sensor count and latent width must be positive");
  if (config.trunk_depth < 1 || config.trunk_width < 1) throw ParameterError("trunk depth and width must be positive");
  for (Index w : config.branch_hidden)
    if (w < 1) throw ParameterError("branch widths must be positive");

  Index offset = 0;
  Index flat = config.sensors;
  if (config.conv_branch) {
    if (config.sensor_rows * config.sensor_cols != config.sensors)
      throw ParameterError("convolutional branch needs sensors = sensor_rows * sensor_cols");
    ConvLayer c1{1, config.conv_channels1, config.sensor_rows, config.sensor_cols, conv_out(config.sensor_rows),
                 conv_out(config.sensor_cols), 0};
    ConvLayer c2{config.conv_channels1, config.conv_channels2, c1.out_rows, c1.out_cols, conv_out(c1.out_rows),
                 conv_out(c1.out_cols), 0};
    if (c2.out_rows < 1 || c2.out_cols < 1) throw ParameterError("sensor grid too small for two stride-2 convolutions");
    for (ConvLayer* c : {&c1, &c2}) {
      c->offset = offset;
      offset += 9 * c->in_ch * c->out_ch + c->out_ch;
    }
    conv_ = {c1, c2};
    flat = c2.out_ch * c2.out_rows * c2.out_cols;
  }
  auto stack = [&](std::vector<DenseLayer>& layers, Index in, const std::vector<Index>& hidden, Activation act) {
    for (Index w : hidden) {
      layers.push_back({in, w, offset, act});
      offset += in * w + w;
      in = w;
    }
    layers.push_back({in, config.latent, offset, Activation::Identity});
    offset += in * config.latent + config.latent;
  };
  stack(branch_, flat, config.branch_hidden, Activation::Relu);
  stack(trunk_, 3, std::vector<Index>(static_cast<std::size_t>(config.trunk_depth), config.trunk_width),
        Activation::Gelu);
  params_ = Vector::Zero(offset + 1);

  std::mt19937_64 rng(config.seed);
  auto glorot = [&](Index off, Index count, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index i = 0; i < count; ++i) params_(off + i) = dist(rng);
  };
  for (const ConvLayer& c : conv_) glorot(c.offset, 9 * c.in_ch * c.out_ch, 9.0 * c.in_ch, 9.0 * c.out_ch);
  for (const DenseLayer& l : branch_) glorot(l.offset, l.in * l.out, double(l.in), double(l.out));
  for (const DenseLayer& l : trunk_) glorot(l.offset, l.in * l.out, double(l.in), double(l.out));
}

std::vector<ParamBlock> DeepONet::layout() const {
  std::vector<ParamBlock> out;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    const ConvLayer& c = conv_[i];
    out.push_back({"branch.conv" + std::to_string(i) + ".W", c.offset, 9 * c.in_ch * c.out_ch});
    out.push_back({"branch.conv" + std::to_string(i) + ".b", c.offset + 9 * c.in_ch * c.out_ch, c.out_ch});
  }
  auto dense = [&](const std::vector<DenseLayer>& layers, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const DenseLayer& l = layers[i];
      out.push_back({prefix + std::to_string(i) + ".W", l.offset, l.in * l.out});
      out.push_back({prefix + std::to_string(i) + ".b", l.offset + l.in * l.out, l.out});
    }
  };
  dense(branch_, "branch.dense");
  dense(trunk_, "trunk.dense");
  out.push_back({"b0", params_.size() - 1, 1});
  return out;
}

Matrix DeepONet::dense_forward(const std::vector<DenseLayer>& layers, Matrix a, std::vector<Matrix>* pre,
                               std::vector<Matrix>* post) const {
  for (const DenseLayer& l : layers) {
    const ConstMap w(params_.data() + l.offset, l.in, l.out);
    const ConstVecMap b(params_.data() + l.offset + l.in * l.out, l.out);
    Matrix z = a * w;
    z.rowwise() += b.transpose();
    a = z.unaryExpr([&](double v) { return activate(l.act, v); });
    if (pre) pre->push_back(std::move(z));
    if (post) post->push_back(a);
  }
  return a;
}

Matrix DeepONet::conv_forward(const ConvLayer& c, const Matrix& in) const {
  const Index s = in.rows();
  const ConstMap w(params_.data() + c.offset, 9 * c.in_ch, c.out_ch);
  const double* b = params_.data() + c.offset + 9 * c.in_ch * c.out_ch;
  Matrix out(s, c.out_ch * c.out_rows * c.out_cols);
  for (Index k = 0; k < s; ++k) {
    for (Index o = 0; o < c.out_ch; ++o) {
      for (Index i = 0; i < c.out_rows; ++i) {
        for (Index j = 0; j < c.out_cols; ++j) {
          double acc = b[o];
          for (Index ch = 0; ch < c.in_ch; ++ch)
            for (Index di = 0; di < 3; ++di)
              for (Index dj = 0; dj < 3; ++dj)
                acc += w((ch * 3 + di) * 3 + dj, o) * in(k, (ch * c.in_rows + 2 * i + di) * c.in_cols + 2 * j + dj);
          out(k, (o * c.out_rows + i) * c.out_cols + j) = acc;
        }
      }
    }
  }
  return out;
}

Matrix DeepONet::branch(const Matrix& kappa_sensors, Tape* tape) const {
  if (kappa_sensors.cols() != config_.sensors) throw ShapeError("branch input width differs from the sensor count");
  Matrix a = kappa_sensors;
  for (const ConvLayer& c : conv_) {
    Matrix z = conv_forward(c, a);
    a = z.cwiseMax(0.0);
    if (tape) {
      tape->branch_pre.push_back(std::move(z));
      tape->branch_post.push_back(a);
    }
  }
  Matrix out = dense_forward(branch_, std::move(a), tape ? &tape->branch_pre : nullptr,
                             tape ? &tape->branch_post : nullptr);
  if (tape) tape->branch_out = out;
  return out;
}

Matrix DeepONet::trunk(const Points& x, Tape* tape) const {
  if (!x.allFinite()) throw ParameterError("trunk locations must be finite");
  Matrix out = dense_forward(trunk_, Matrix(x), tape ? &tape->trunk_pre : nullptr, tape ? &tape->trunk_post : nullptr);
  if (tape) tape->trunk_out = out;
  return out;
}

Matrix DeepONet::forward(const Matrix& kappa_sensors, const Points& x, Tape* tape) const {
  if (tape) *tape = Tape{};
  const Matrix b = branch(kappa_sensors, tape);
  const Matrix t = trunk(x, tape);
  Matrix out = b * t.transpose();
  out.array() += b0();
  return out;
}

Vector DeepONet::forward(const Vector& kappa_sensors, const Points& x) const {
  return forward(Matrix(kappa_sensors.transpose()), x).row(0).transpose();
}

Matrix DeepONet::dense_backward(const std::vector<DenseLayer>& layers, const std::vector<Matrix>& pre,
                                const std::vector<Matrix>& post, const Matrix& input, Matrix delta,
                                Vector& grad) const {
  const std::size_t base = pre.size() - layers.size();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const DenseLayer& l = layers[li];
    const Matrix& z = pre[base + li];
    const Matrix dz = delta.cwiseProduct(z.unaryExpr([&](double v) { return activate_derivative(l.act, v); }));
    const Matrix& a_in = li == 0 ? input : post[base + li - 1];
    MutMap gw(grad.data() + l.offset, l.in, l.out);
    gw.noalias() += a_in.transpose() * dz;
    Eigen::Map<Vector>(grad.data() + l.offset + l.in * l.out, l.out) += dz.colwise().sum().transpose();
    const ConstMap w(params_.data() + l.offset, l.in, l.out);
    delta = dz * w.transpose();
  }
  return delta;
}

Vector DeepONet::backward(const Tape& tape, const Matrix& kappa_sensors, const Points& x, const Matrix& dpred) const {
  if (dpred.rows() != tape.branch_out.rows() || dpred.cols() != tape.trunk_out.rows())
    throw ShapeError("prediction gradient does not match the forward pass");
  Vector grad = Vector::Zero(params_.size());
  grad(grad.size() - 1) = dpred.sum();

  const Matrix d_branch = dpred * tape.trunk_out;
  const Matrix d_trunk = dpred.transpose() * tape.branch_out;
  dense_backward(trunk_, tape.trunk_pre, tape.trunk_post, Matrix(x), d_trunk, grad);

  const std::size_t nc = conv_.size();
  const Matrix& dense_in = nc > 0 ? tape.branch_post[nc - 1] : kappa_sensors;
  Matrix delta = dense_backward(branch_, tape.branch_pre, tape.branch_post, dense_in, d_branch, grad);

  for (std::size_t ci = nc; ci-- > 0;) {
    const ConvLayer& c = conv_[ci];
    const Matrix dz = delta.cwiseProduct(tape.branch_pre[ci].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    const Matrix& in = ci == 0 ? kappa_sensors : tape.branch_post[ci - 1];
    MutMap gw(grad.data() + c.offset, 9 * c.in_ch, c.out_ch);
    double* gb = grad.data() + c.offset + 9 * c.in_ch * c.out_ch;
    const ConstMap w(params_.data() + c.offset, 9 * c.in_ch, c.out_ch);
    Matrix din = Matrix::Zero(in.rows(), in.cols());
    for (Index k = 0; k < in.rows(); ++k) {
      for (Index o = 0; o < c.out_ch; ++o) {
        for (Index i = 0; i < c.out_rows; ++i) {
          for (Index j = 0; j < c.out_cols; ++j) {
            const double g = dz(k, (o * c.out_rows + i) * c.out_cols + j);
            if (g == 0.0) continue;
            gb[o] += g;
            for (Index ch = 0; ch < c.in_ch; ++ch)
              for (Index di = 0; di < 3; ++di)
                for (Index dj = 0; dj < 3; ++dj) {
                  const Index wi = (ch * 3 + di) * 3 + dj;
                  const Index ii = (ch * c.in_rows + 2 * i + di) * c.in_cols + 2 * j + dj;
                  gw(wi, o) += g * in(k, ii);
                  din(k, ii) += g * w(wi, o);
                }
          }
        }
      }
    }
    delta = std::move(din);
  }
  return grad;
}

// -------------------------------------------------------------------- losses

ObservationData observation_data(const OperatorDataset& data) {
  if (!data.has_solutions()) throw ParameterError("dataset has no solutions");
  return {data.kappa_sensors, data.solutions};
}

PhysicsData physics_data(const OperatorDataset& data, std::shared_ptr<const OperatorFactory> factory) {
  if (!factory || factory->size() != data.cloud.size()) throw ShapeError("operator factory does not match the cloud");
  PhysicsData p;
  p.kappa_sensors = data.kappa_sensors;
  p.kappa_points = data.kappa_points.transpose();
  p.factory = std::move(factory);
  p.rhs = data.rhs;
  p.c = data.c;
  if (data.boundary) {
    p.boundary = data.boundary->split;
    p.g_tilde = data.boundary->g_tilde;
  }
  return p;
}

Matrix PhysicsData::apply(const Matrix& u, bool transpose) const {
  const Index s = count();
  if (u.cols() != s) throw ShapeError("physics batch size mismatch");
  Matrix out;
  if (!operators.empty()) {
    if (static_cast<Index>(operators.size()) != s) throw ShapeError("need one operator per physics sample");
    out.resize(u.rows(), s);
    for (Index k = 0; k < s; ++k) {
      const DiscreteOperator& op = operators[static_cast<std::size_t>(k)];
      if (op.size() != u.rows()) throw ShapeError("operator/cloud size mismatch");
      out.col(k) = transpose ? op.apply_transpose(Matrix(u.col(k))).col(0) : op.apply(Vector(u.col(k)));
    }
  } else {
    if (!factory) throw ParameterError("physics data without operators");
    if (factory->size() != u.rows() || kappa_points.rows() != u.rows()) throw ShapeError("operator/cloud size mismatch");
    out = factory->apply_many(kappa_points, u, transpose);
  }
  out += c * u;
  return out;
}

double loss_obs(const Matrix& pred, const Matrix& target, Matrix* dpred) {
  if (pred.size() == 0) throw ParameterError("empty observation set");
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("prediction/target shape mismatch");
  const Matrix diff = pred - target;
  const double scale = 1.0 / static_cast<double>(diff.size());
  if (dpred) *dpred = 2.0 * scale * diff;
  return scale * diff.squaredNorm();
}

double loss_pde(const Matrix& pred, const PhysicsData& pde, Matrix* dpred) {
  const Index s = pred.rows(), n = pred.cols();
  if (s == 0) throw ParameterError("empty physics set");
  if (pde.rhs.size() != n) throw ShapeError("right-hand side does not match the cloud");
  Matrix r = pde.apply(pred.transpose());
  r.colwise() -= pde.rhs;
  Index interior = n;
  if (pde.boundary) {
    if (pde.boundary->size() != n) throw ShapeError("boundary split does not match the cloud");
    for (Index i : pde.boundary->near_boundary) r.row(i).setZero();
    interior = static_cast<Index>(pde.boundary->interior.size());
    if (interior == 0) throw ParameterError("no interior points");
  }
  const double scale = 1.0 / (static_cast<double>(s) * static_cast<double>(interior));
  if (dpred) *dpred = (2.0 * scale) * pde.apply(r, true).transpose();
  return scale * r.squaredNorm();
}

double loss_bc(const Matrix& pred, const PhysicsData& pde, Matrix* dpred) {
  if (!pde.boundary || pde.boundary->near_boundary.empty()) throw ParameterError("empty near-boundary set");
  const Index s = pred.rows(), n = pred.cols();
  if (s == 0) throw ParameterError("empty physics set");
  if (pde.g_tilde.size() != n || pde.boundary->size() != n) throw ShapeError("boundary data does not match the cloud");
  const auto& nb = pde.boundary->near_boundary;
  const double scale = 1.0 / (static_cast<double>(s) * static_cast<double>(nb.size()));
  if (dpred) *dpred = Matrix::Zero(s, n);
  double sum = 0.0;
  for (Index k = 0; k < s; ++k) {
    for (Index i : nb) {
      const double d = pred(k, i) - pde.g_tilde(i);
      sum += d * d;
      if (dpred) (*dpred)(k, i) = 2.0 * scale * d;
    }
  }
  return scale * sum;
}

double loss_obs(const DeepONet& model, const Points& x, const ObservationData& obs) {
  return loss_obs(model.forward(obs.kappa_sensors, x), obs.solutions);
}

double loss_pde(const DeepONet& model, const Points& x, const PhysicsData& pde) {
  return loss_pde(model.forward(pde.kappa_sensors, x), pde);
}

double loss_bc(const DeepONet& model, const Points& x, const PhysicsData& pde) {
  return loss_bc(model.forward(pde.kappa_sensors, x), pde);
}

LossBundle evaluate_losses(const DeepONet& model, const Points& x, const ObservationData* obs, const PhysicsData* pde,
                           const LossWeights& weights, Vector* grad) {
  if (weights.obs < 0.0 || weights.pde < 0.0 || weights.bc < 0.0) throw ParameterError("loss weights must be >= 0");
  const bool use_obs = obs && obs->kappa_sensors.rows() > 0;
  const bool use_pde = pde && pde->count() > 0;
  const bool use_bc = use_pde && pde->boundary && !pde->boundary->near_boundary.empty();
  const Index so = use_obs ? obs->kappa_sensors.rows() : 0;
  const Index sp = use_pde ? pde->count() : 0;
  if (so + sp == 0) throw ParameterError("no training samples");

  Matrix inputs(so + sp, model.config().sensors);
  if (use_obs) inputs.topRows(so) = obs->kappa_sensors;
  if (use_pde) inputs.bottomRows(sp) = pde->kappa_sensors;

  DeepONet::Tape tape;
  const Matrix pred = model.forward(inputs, x, grad ? &tape : nullptr);
  Matrix dpred;
  if (grad) dpred = Matrix::Zero(pred.rows(), pred.cols());

  LossBundle out;
  Matrix d;
  if (use_obs) {
    const bool g = grad && weights.obs > 0.0;
    out.obs = loss_obs(pred.topRows(so), obs->solutions, g ? &d : nullptr);
    if (g) dpred.topRows(so) += weights.obs * d;
  }
  if (use_pde) {
    const bool g = grad && weights.pde > 0.0;
    out.pde = loss_pde(pred.bottomRows(sp), *pde, g ? &d : nullptr);
    if (g) dpred.bottomRows(sp) += weights.pde * d;
  }
  if (use_bc) {
    const bool g = grad && weights.bc > 0.0;
    out.bc = loss_bc(pred.bottomRows(sp), *pde, g ? &d : nullptr);
    if (g) dpred.bottomRows(sp) += weights.bc * d;
  }
  out.total = weights.obs * out.obs + weights.pde * out.pde + weights.bc * out.bc;
  if (grad) *grad = model.backward(tape, inputs, x, dpred);
  return out;
}

// ------------------------------------------------------------------ training

Json to_json(const TrainingConfig& c) {
  return {{"w_obs", c.weights.obs},     {"w_pde", c.weights.pde},   {"w_bc", c.weights.bc},
          {"lr0", c.lr0},               {"decay_r", c.decay_r},     {"decay_steps", c.decay_steps},
          {"epochs", c.epochs},         {"log_every", c.log_every}, {"beta1", c.beta1},
          {"beta2", c.beta2},           {"adam_eps", c.adam_eps},   {"seed", c.seed},
          {"keep_best", c.keep_best}};
}

TrainingConfig training_config_from_json(const Json& j) {
  TrainingConfig c;
  c.weights.obs = j.value("w_obs", c.weights.obs);
  c.weights.pde = j.value("w_pde", c.weights.pde);
  c.weights.bc = j.value("w_bc", c.weights.bc);
  c.lr0 = j.value("lr0", c.lr0);
  c.decay_r = j.value("decay_r", c.decay_r);
  c.decay_steps = j.value("decay_steps", c.decay_steps);
  c.epochs = j.value("epochs", c.epochs);
  c.log_every = j.value("log_every", c.log_every);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  c.keep_best = j.value("keep_best", c.keep_best);
  return c;
}

LossWeights default_loss_weights(Estimator e) {
  switch (e) {
    case Estimator::DM: return {1.0, 1e-4, 0.0};
    case Estimator::RBF: return {1.0, 1e-3, 0.0};
    case Estimator::GMLS: return {1.0, 1e-7, 1.0};
  }
  return {};
}

double learning_rate(const TrainingConfig& c, Index epoch) {
  return c.lr0 / (1.0 + c.decay_r * static_cast<double>(epoch) / c.decay_steps);
}

TrainResult train(DeepONet model, const Points& x, const ObservationData* obs, const PhysicsData* pde,
                  const TrainingConfig& config) {
  if (!(config.lr0 > 0.0)) throw ParameterError("lr0 must be positive");
  if (config.epochs < 0) throw ParameterError("epochs must be non-negative");
  if (!(config.decay_steps > 0.0)) throw ParameterError("decay_steps must be positive");
  if (config.log_every < 1) throw ParameterError("log_every must be positive");
  const LossWeights& w = config.weights;
  const bool has_obs = obs && obs->kappa_sensors.rows() > 0;
  const bool has_pde = pde && pde->count() > 0;
  const bool has_bc = has_pde && pde->boundary && !pde->boundary->near_boundary.empty();
  if (!((w.obs > 0.0 && has_obs) || (w.pde > 0.0 && has_pde) || (w.bc > 0.0 && has_bc)))
    throw ParameterError("no loss term has both a positive weight and data");

  TrainResult result;
  const Index np = model.num_params();
  Vector m = Vector::Zero(np), v = Vector::Zero(np), grad;
  Vector last_good = model.params();
  Vector best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  for (Index n = 0; n < config.epochs; ++n) {
    const LossBundle loss = evaluate_losses(model, x, obs, pde, w, &grad);
    if (!std::isfinite(loss.total) || !grad.allFinite()) {
      result.diverged = true;
      result.message = "non-finite loss at epoch " + std::to_string(n);
      model.params() = last_good;
      break;
    }
    last_good = model.params();
    if (loss.total < best_loss) {
      best_loss = loss.total;
      best = model.params();
      result.best_epoch = n;
    }
    if (n % config.log_every == 0) result.history.push_back({n, loss, learning_rate(config, n)});
    result.loss_trace.push_back(loss.total);

    const double lr = learning_rate(config, n);
    const double t = static_cast<double>(n + 1);
    const double c1 = 1.0 - std::pow(config.beta1, t), c2 = 1.0 - std::pow(config.beta2, t);
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad.cwiseAbs2();
    Vector& p = model.params();
    for (Index i = 0; i < np; ++i) p(i) -= lr * (m(i) / c1) / (std::sqrt(v(i) / c2) + config.adam_eps);
    result.epochs_run = n + 1;
  }
  if (!result.diverged) {
    const LossBundle loss = evaluate_losses(model, x, obs, pde, w);
    if (std::isfinite(loss.total)) {
      if (result.history.empty() || result.history.back().epoch != result.epochs_run)
        result.history.push_back({result.epochs_run, loss, learning_rate(config, result.epochs_run)});
      if (loss.total < best_loss) {
        best_loss = loss.total;
        best = model.params();
        result.best_epoch = result.epochs_run;
      }
    } else {
      result.diverged = true;
      result.message = "non-finite loss after the last update";
      model.params() = last_good;
    }
  }
  if (config.keep_best && config.epochs > 0 && std::isfinite(best_loss)) model.params() = best;
  result.model = std::move(model);
  return result;
}

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& history) {
  std::ostringstream out;
  out << "epoch,obs,pde,bc,total,lr\n";
  for (const HistoryRow& r : history)
    out << r.epoch << ',' << format_double(r.loss.obs) << ',' << format_double(r.loss.pde) << ','
        << format_double(r.loss.bc) << ',' << format_double(r.loss.total) << ',' << format_double(r.lr) << '\n';
  write_text(path, out.str());
}

double mean_l2_relative_error(const Matrix& pred, const Matrix& reference) {
  if (reference.rows() == 0) throw ParameterError("empty test set");
  if (pred.rows() != reference.rows() || pred.cols() != reference.cols())
    throw ShapeError("prediction/reference shape mismatch");
  double sum = 0.0;
  for (Index j = 0; j < reference.rows(); ++j) {
    const double denom = reference.row(j).norm();
    if (!(denom > 0.0)) throw NumericalError("reference solution " + std::to_string(j) + " has zero norm");
    sum += (pred.row(j) - reference.row(j)).norm() / denom;
  }
  return sum / static_cast<double>(reference.rows());
}

double mean_l2_relative_error(const DeepONet& model, const Points& x, const ObservationData& test) {
  return mean_l2_relative_error(model.forward(test.kappa_sensors, x), test.solutions);
}

// --------------------------------------------------------------- checkpoints

void save_checkpoint(const DeepONet& model, const std::string& path, const Json& extra) {
  Json layout = Json::array();
  for (const ParamBlock& b : model.layout()) layout.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  const Json header = {{"format", "mol-deeponet"},
                       {"version", 1},
                       {"network", to_json(model.config())},
                       {"num_params", model.num_params()},
                       {"layout", layout},
                       {"extra", extra}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path);
  out << header.dump() << '\n';
  for (Index i = 0; i < model.num_params(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(model.params()(i));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw IoError("write failed: " + path);
}

DeepONet load_checkpoint(const std::string& path, Json* header_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty checkpoint " + path);
  Json header;
  try {
    header = Json::parse(line);
  } catch (const std::exception& e) {
    throw IoError("malformed checkpoint header in " + path + ": " + e.what());
  }
  if (header.value("format", std::string()) != "mol-deeponet") throw IoError("not a DeepONet checkpoint: " + path);
  DeepONet model(network_config_from_json(header.at("network")));
  const Index np = header.at("num_params").get<Index>();
  if (np != model.num_params()) throw IoError("checkpoint parameter count disagrees with its architecture");
  for (Index i = 0; i < np; ++i) {
    std::uint64_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw IoError("truncated checkpoint " + path);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    model.params()(i) = std::bit_cast<double>(bits);
  }
  if (header_out) *header_out = std::move(header);
  return model;
}

}  // namespace mol

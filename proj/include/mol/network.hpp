#pragma once

// DeepONet G(kappa)(x) = sum_k b_k(kappa(Xi)) t_k(x) + b0 with hand-written
// reverse-mode gradients, the data / physics / boundary losses, and an Adam
// training loop with inverse-time learning-rate decay.

#include "mol/core.hpp"
#include "mol/fields.hpp"
#include "mol/io.hpp"
#include "mol/operators.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mol {

enum class Activation { Identity, Relu, Gelu };

// tanh form 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))); within 1e-3 of
// the erf form everywhere. The derivative is that of this approximation.
double gelu(double x);
double gelu_derivative(double x);

struct NetworkConfig {
  Index sensors = 676;
  // Branch: dense hidden widths (ReLU), then a linear layer to `latent`.
  std::vector<Index> branch_hidden{128, 128};
  // Optional convolutional front end on the sensor grid: two 3x3 stride-2
  // valid convolutions with ReLU, flattened into the dense stack.
  bool conv_branch = false;
  Index sensor_rows = 26, sensor_cols = 26;
  Index conv_channels1 = 16, conv_channels2 = 32;
  // Trunk: `trunk_depth` GELU layers of `trunk_width` on (x, y, z), then a
  // linear layer to `latent`.
  Index trunk_depth = 3, trunk_width = 32;
  Index latent = 32;
  std::uint64_t seed = 0;
};

Json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const Json& j);

struct ParamBlock {
  std::string name;
  Index offset = 0, size = 0;
};

class DeepONet {
 public:
  struct DenseLayer {
    Index in = 0, out = 0, offset = 0;  // W (in x out, column-major) then b
    Activation act = Activation::Identity;
  };
  struct ConvLayer {
    Index in_ch = 0, out_ch = 0, in_rows = 0, in_cols = 0, out_rows = 0, out_cols = 0, offset = 0;
  };

  // Cached activations of one forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> branch_pre, branch_post;  // conv then dense layers
    std::vector<Matrix> trunk_pre, trunk_post;
    Matrix branch_out;  // S x p
    Matrix trunk_out;   // N x p
  };

  DeepONet() = default;
  // Layout from `config`, Glorot-uniform weights from config.seed, zero biases.
  explicit DeepONet(const NetworkConfig& config);

  const NetworkConfig& config() const { return config_; }
  Index num_params() const { return params_.size(); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  double b0() const { return params_(params_.size() - 1); }
  double& b0() { return params_(params_.size() - 1); }
  std::vector<ParamBlock> layout() const;

  // S x p and N x p.
  Matrix branch(const Matrix& kappa_sensors, Tape* tape = nullptr) const;
  Matrix trunk(const Points& x, Tape* tape = nullptr) const;
  // S x N predictions, branch(kappa) trunk(x)^T + b0.
  Matrix forward(const Matrix& kappa_sensors, const Points& x, Tape* tape = nullptr) const;
  Vector forward(const Vector& kappa_sensors, const Points& x) const;

  // Gradient of a scalar loss given dL/dprediction (S x N) and the tape of
  // the forward pass that produced the predictions.
  Vector backward(const Tape& tape, const Matrix& kappa_sensors, const Points& x, const Matrix& dpred) const;

 private:
  Matrix dense_forward(const std::vector<DenseLayer>& layers, Matrix a, std::vector<Matrix>* pre,
                       std::vector<Matrix>* post) const;
  Matrix conv_forward(const ConvLayer& c, const Matrix& in) const;
  Matrix dense_backward(const std::vector<DenseLayer>& layers, const std::vector<Matrix>& pre,
                        const std::vector<Matrix>& post, const Matrix& input, Matrix delta, Vector& grad) const;

  NetworkConfig config_;
  std::vector<ConvLayer> conv_;
  std::vector<DenseLayer> branch_;
  std::vector<DenseLayer> trunk_;
  Vector params_;
};

// ------------------------------------------------------------------- losses

struct ObservationData {
  Matrix kappa_sensors;  // S x m
  Matrix solutions;      // S x N
};

ObservationData observation_data(const OperatorDataset& data);

// Physics-constraint samples. Operators come either from a shared factory
// (applied matrix-free to all samples at once) or from an explicit list.
struct PhysicsData {
  Matrix kappa_sensors;  // S x m
  Matrix kappa_points;   // N x S, one column per sample
  std::shared_ptr<const OperatorFactory> factory;
  std::vector<DiscreteOperator> operators;
  Vector rhs;
  double c = 1.0;
  std::optional<BoundarySplit> boundary;
  Vector g_tilde;  // length N when boundary is set

  Index count() const { return kappa_sensors.rows(); }
  // (L_k + c I) u_k for the columns of u (N x S).
  Matrix apply(const Matrix& u, bool transpose = false) const;
};

PhysicsData physics_data(const OperatorDataset& data, std::shared_ptr<const OperatorFactory> factory);

struct LossWeights {
  double obs = 1.0, pde = 0.0, bc = 0.0;
};

struct LossBundle {
  double obs = 0.0, pde = 0.0, bc = 0.0, total = 0.0;
};

// Losses on given predictions; each fills `dpred` with dL/dpred when non-null.
// obs: mean over samples and points of (pred - target)^2.
double loss_obs(const Matrix& pred, const Matrix& target, Matrix* dpred = nullptr);
// pde: mean over samples and interior points of ((L + cI) pred - f)^2.
double loss_pde(const Matrix& pred, const PhysicsData& pde, Matrix* dpred = nullptr);
// bc: mean over samples and near-boundary points of (pred - g~)^2.
double loss_bc(const Matrix& pred, const PhysicsData& pde, Matrix* dpred = nullptr);

// Model-level versions.
double loss_obs(const DeepONet& model, const Points& x, const ObservationData& obs);
double loss_pde(const DeepONet& model, const Points& x, const PhysicsData& pde);
double loss_bc(const DeepONet& model, const Points& x, const PhysicsData& pde);

// Weighted total and, when `grad` is non-null, its gradient. obs / pde may be
// null when unused.
LossBundle evaluate_losses(const DeepONet& model, const Points& x, const ObservationData* obs, const PhysicsData* pde,
                           const LossWeights& weights, Vector* grad = nullptr);

// ----------------------------------------------------------------- training

struct TrainingConfig {
  LossWeights weights;
  double lr0 = 1e-3;
  double decay_r = 0.5;
  double decay_steps = 20000.0;
  Index epochs = 20000;
  Index log_every = 100;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Return the parameters with the lowest total training loss seen rather
  // than the last iterate (full-batch Adam occasionally spikes late).
  bool keep_best = true;
};

Json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const Json& j);

// Default (w_obs, w_pde, w_bc) per estimator for physics-informed runs.
LossWeights default_loss_weights(Estimator e);

// gamma_n = gamma_0 / (1 + r n / S).
double learning_rate(const TrainingConfig& c, Index epoch);

struct HistoryRow {
  Index epoch = 0;
  LossBundle loss;
  double lr = 0.0;
};

struct TrainResult {
  DeepONet model;  // best (or last) parameters with a finite loss
  Index best_epoch = 0;
  std::vector<HistoryRow> history;
  std::vector<double> loss_trace;  // total loss at every epoch, before its update
  bool diverged = false;
  Index epochs_run = 0;
  std::string message;
};

// Full-batch Adam. History rows at epochs 0, log_every, ... and at the end.
TrainResult train(DeepONet model, const Points& x, const ObservationData* obs, const PhysicsData* pde,
                  const TrainingConfig& config);

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& history);

// (1/S) sum_j |pred_j - ref_j|_2 / |ref_j|_2.
double mean_l2_relative_error(const Matrix& pred, const Matrix& reference);
double mean_l2_relative_error(const DeepONet& model, const Points& x, const ObservationData& test);

// One JSON header line, then the parameters as little-endian float64.
void save_checkpoint(const DeepONet& model, const std::string& path, const Json& extra = Json::object());
DeepONet load_checkpoint(const std::string& path, Json* header = nullptr);

}  // namespace mol

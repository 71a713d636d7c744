#pragma once

// Discrete approximations of L u = -div(kappa grad u) on point clouds:
// Diffusion Maps, global RBF projection and GMLS, plus the helpers they
// share (bandwidth tuning, tangent frames, stencil weight stabilization).

#include "mol/core.hpp"
#include "mol/geometry.hpp"

#include <array>
#include <optional>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace mol {

enum class Estimator { DM, RBF, GMLS };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);

struct OperatorParams {
  double epsilon = 0.0;  // DM bandwidth
  int intrinsic_dim = 2;
  double shape = 0.0;  // RBF shape s
  double pinv_tol = 0.0;
  Index stencil_size = 0;  // GMLS K
  Index degree = 0;
};

struct DiscreteOperator {
  std::variant<SparseMatrix, Matrix> matrix;
  Estimator estimator = Estimator::DM;
  OperatorParams params;
  std::string kappa_hash;

  Index size() const;
  bool is_dense() const { return std::holds_alternative<Matrix>(matrix); }
  Vector apply(const Vector& u) const;
  Matrix apply(const Matrix& u) const;
  Matrix apply_transpose(const Matrix& u) const;
  Matrix to_dense() const;
  SparseMatrix to_sparse() const;
};

// Coordinate list `row,col,value` plus a JSON sidecar.
void save_operator(const DiscreteOperator& op, const std::string& coo_path, const std::string& json_path);
DiscreteOperator load_operator(const std::string& coo_path, const std::string& json_path);

// ---------------------------------------------------------------- bandwidth

struct BandwidthReport {
  Vector epsilon_grid;
  Vector log_s;
  Vector slopes;  // d log S / d log eps on the grid
  double chosen_epsilon = 0.0;
  double max_slope = 0.0;
  int estimated_d = 0;
};

// 2^-14 .. 10, log-spaced.
Vector default_epsilon_grid(Index count = 120);

// S(eps) = (1/(N k)) sum_i sum_r exp(-|x_i - x_{i_r}|^2 / (4 eps)), self
// pairs included. The chosen eps is the largest grid value whose slope lies
// within 0.05 of d/2, falling back to the closest slope.
BandwidthReport tune_epsilon(const NeighborIndex& knn, const Vector& grid);

// eps_ref (n / n_ref)^{-2/(d+6)}: the bias/variance balanced decay of the DM
// bandwidth, used to carry a tuned value across cloud sizes.
inline double scaled_bandwidth(double eps_ref, Index n_ref, Index n, int d) {
  return eps_ref * std::pow(static_cast<double>(n) / static_cast<double>(n_ref), -2.0 / (d + 6));
}

// ----------------------------------------------------------- diffusion maps

// The kappa-independent part of W: entries eps^{-d/2-1} N^{-1} h_ij / Q_j on
// the symmetrized kNN support, so that W = diag(sqrt kappa) K diag(sqrt kappa).
struct DmKernel {
  SparseMatrix kernel;
  Vector q;
  double epsilon = 0.0;
  int intrinsic_dim = 2;
};

DmKernel build_dm_kernel(const Points& points, const NeighborIndex& knn, double epsilon, int d);
SparseMatrix assemble_dm_weights(const DmKernel& kernel, const Vector& kappa);
DiscreteOperator assemble_dm_operator(const DmKernel& kernel, const Vector& kappa);
DiscreteOperator build_dm_operator(const Points& points, const NeighborIndex& knn, const Vector& kappa,
                                   double epsilon, int d);

// ----------------------------------------------------------- tangent frames

struct TangentFrame {
  Index base_index = 0;
  Eigen::Matrix<double, 3, Eigen::Dynamic> vectors;  // 3 x d, orthonormal columns
  Eigen::Matrix3d projector;

  int dim() const { return static_cast<int>(vectors.cols()); }
};

enum class FrameMethod {
  Pca,        // top-d principal directions of the centred kNN row
  Quadratic,  // PCA, then tilted by a local quadratic fit of the normal offset (d = 2)
};

TangentFrame estimate_tangent_frame(const Points& points, const NeighborIndex& knn, Index base, int d,
                                    FrameMethod method = FrameMethod::Pca);
std::vector<TangentFrame> estimate_tangent_frames(const Points& points, const NeighborIndex& knn, int d,
                                                  FrameMethod method = FrameMethod::Pca);

// ---------------------------------------------------------------------- RBF

inline double inverse_quadratic(double t, double s) { return 1.0 / (1.0 + (s * t) * (s * t)); }

// 0.75 / (RMS distance of the cloud from its centroid). Scales like 1/length,
// so the kernel width tracks the size of the manifold rather than the spacing.
double default_rbf_shape(const Points& points);

constexpr Index kRbfDefaultCap = 3000;
constexpr Index kRbfFrameNeighbors = 18;

Matrix rbf_interpolation_matrix(const Points& points, double shape);

// Eigenvalue-truncated pseudo-inverse of a symmetric matrix; eigenvalues with
// |lambda| <= tol are dropped. `rank` receives the number kept.
Matrix pseudo_inverse_symmetric(const Matrix& a, double tol, Index* rank = nullptr);

// Tangential differentiation matrices G_l = B_l Phi^+, l = x, y, z.
struct RbfGradients {
  std::array<Matrix, 3> g;
  double shape = 0.0;
  double pinv_tol = 0.0;
  Index rank = 0;

  Index size() const { return g[0].rows(); }
};

struct RbfOptions {
  double shape = 0.0;  // <= 0 selects default_rbf_shape
  double pinv_tol = 1e-6;
  Index max_points = kRbfDefaultCap;
  FrameMethod frames = FrameMethod::Quadratic;
};

RbfGradients build_rbf_gradients(const Points& points, const std::vector<TangentFrame>& frames,
                                 const RbfOptions& options = {});
// -sum_l G_l diag(kappa) G_l, dense.
DiscreteOperator assemble_rbf_operator(const RbfGradients& grads, const Vector& kappa);
// The same operator applied to u without forming it.
Vector apply_rbf_operator(const RbfGradients& grads, const Vector& kappa, const Vector& u);
DiscreteOperator build_rbf_operator(const Points& points, const Vector& kappa, const RbfOptions& options = {});

// --------------------------------------------------------------------- GMLS

inline Index polynomial_dim(Index degree, int d) {
  Index m = 1;
  for (int i = 1; i <= d; ++i) m = m * (degree + i) / i;
  return m;
}

// Exponents alpha with |alpha| <= degree in two variables, graded order
// starting with the constant.
std::vector<std::array<int, 2>> monomial_exponents(Index degree);

struct GmlsRow {
  Matrix gradient;     // 3 x K, tangential gradient weights at the base point
  Vector laplacian;    // K, first row of sum_l G_l G_l
  Matrix vandermonde;  // K x m, scaled tangent monomials
};

// One stencil: row 0 of `stencil` is the base point, `projectors[k]` is the
// tangent projector at stencil point k and `base_frame` the base tangent basis.
GmlsRow gmls_row(const Points& stencil, const std::vector<Eigen::Matrix3d>& projectors,
                 const Eigen::Matrix<double, 3, Eigen::Dynamic>& base_frame, Index degree);

struct StabilizedRow {
  Vector weights;
  double c = 0.0;
  bool feasible = true;  // false: weights returned unchanged
};

// min C  s.t.  Phi^T w_hat = Phi^T w,  w_hat_1 <= 0,  w_hat_k + C >= 0 (k >= 2),
// 0 <= C <= |min_{k>=2} w_k|.
StabilizedRow stabilize_row(const Vector& weights, const Matrix& vandermonde);

struct GmlsStencils {
  IndexMatrix stencil;  // N x K, base point first
  std::array<Matrix, 3> gradient;  // N x K each
  Matrix laplacian;                // N x K
  std::vector<bool> stabilization_failed;
  Index degree = 2;

  Index size() const { return stencil.rows(); }
  Index stencil_size() const { return stencil.cols(); }
};

inline Index default_gmls_stencil(Index degree) { return 3 * polynomial_dim(degree, 2); }

// Stencils are the kNN rows, so K = knn.k.
GmlsStencils build_gmls_stencils(const Points& points, const NeighborIndex& knn, Index degree, bool stabilize = true,
                                 FrameMethod frames = FrameMethod::Quadratic);
// -sum_l diag(G_l kappa) G_l - diag(kappa) Delta.
DiscreteOperator assemble_gmls_operator(const GmlsStencils& stencils, const Vector& kappa);
DiscreteOperator build_gmls_operator(const Points& points, const NeighborIndex& knn, const Vector& kappa, Index degree);

// ------------------------------------------------------------------ factory

struct OperatorSettings {
  Estimator estimator = Estimator::DM;
  // DM
  Index dm_neighbors = 0;      // 0: ceil(1.5 sqrt N)
  double dm_epsilon = 0.0;     // 0: tuned
  double dm_epsilon_scale = 1.0;
  int intrinsic_dim = 2;
  // RBF
  RbfOptions rbf;
  // GMLS
  Index gmls_stencil = 0;  // 0: 3 * C(p + 2, 2)
  Index gmls_degree = 2;
  bool gmls_stabilize = true;
};

// Holds the kappa-independent part of an estimator for one cloud, so that
// operators for many coefficient fields are cheap to assemble.
class OperatorFactory {
 public:
  OperatorFactory(const Points& points, const OperatorSettings& settings);

  DiscreteOperator build(const Vector& kappa) const;
  // L u without forming L (RBF stays matrix-free; others assemble sparse).
  Vector apply(const Vector& kappa, const Vector& u) const;
  // Column j of the result is L(kappa.col(j)) u.col(j), or its transpose
  // applied when `transpose` is set. No per-sample matrix is formed.
  Matrix apply_many(const Matrix& kappa, const Matrix& u, bool transpose = false) const;

  Index size() const { return n_; }
  const OperatorSettings& settings() const { return settings_; }
  // Bandwidth actually used by DM (after tuning and scaling); 0 otherwise.
  double epsilon() const { return epsilon_; }
  const std::optional<BandwidthReport>& bandwidth_report() const { return bandwidth_; }

 private:
  OperatorSettings settings_;
  Index n_ = 0;
  double epsilon_ = 0.0;
  std::optional<BandwidthReport> bandwidth_;
  std::optional<DmKernel> dm_;
  std::optional<RbfGradients> rbf_;
  std::optional<GmlsStencils> gmls_;
  std::array<SparseMatrix, 3> gmls_gradient_;
  SparseMatrix gmls_laplacian_;
};

}  // namespace mol

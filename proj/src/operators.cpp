#include "mol/operators.hpp"

#include "mol/io.hpp"
#include "mol/simplex.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace mol {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::DM: return "dm";
    case Estimator::RBF: return "rbf";
    case Estimator::GMLS: return "gmls";
  }
  return "dm";
}

Estimator estimator_from_string(const std::string& name) {
  if (name == "dm") return Estimator::DM;
  if (name == "rbf") return Estimator::RBF;
  if (name == "gmls") return Estimator::GMLS;
  throw ConfigError("unknown estimator: " + name);
}

// ---------------------------------------------------------- DiscreteOperator

Index DiscreteOperator::size() const {
  return std::visit([](const auto& m) -> Index { return m.rows(); }, matrix);
}

Vector DiscreteOperator::apply(const Vector& u) const {
  if (u.size() != size()) throw ShapeError("operator/vector size mismatch");
  return std::visit([&](const auto& m) -> Vector { return m * u; }, matrix);
}

Matrix DiscreteOperator::apply(const Matrix& u) const {
  if (u.rows() != size()) throw ShapeError("operator/matrix size mismatch");
  return std::visit([&](const auto& m) -> Matrix { return m * u; }, matrix);
}

Matrix DiscreteOperator::apply_transpose(const Matrix& u) const {
  if (u.rows() != size()) throw ShapeError("operator/matrix size mismatch");
  return std::visit([&](const auto& m) -> Matrix { return m.transpose() * u; }, matrix);
}

Matrix DiscreteOperator::to_dense() const {
  if (const auto* s = std::get_if<SparseMatrix>(&matrix)) return Matrix(*s);
  return std::get<Matrix>(matrix);
}

SparseMatrix DiscreteOperator::to_sparse() const {
  if (const auto* s = std::get_if<SparseMatrix>(&matrix)) return *s;
  return std::get<Matrix>(matrix).sparseView(0.0, 0.0);
}

void save_operator(const DiscreteOperator& op, const std::string& coo_path, const std::string& json_path) {
  const SparseMatrix s = op.to_sparse();
  std::ofstream out(coo_path);
  if (!out) throw IoError("cannot open " + coo_path);
  out << "row,col,value\n";
  for (Index i = 0; i < s.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(s, i); it; ++it)
      out << it.row() << ',' << it.col() << ',' << format_double(it.value()) << '\n';
  if (!out) throw IoError("write failed: " + coo_path);

  Json meta = {{"estimator", to_string(op.estimator)},
               {"N", op.size()},
               {"dense", op.is_dense()},
               {"kappa_hash", op.kappa_hash},
               {"params",
                {{"epsilon", op.params.epsilon},
                 {"intrinsic_dim", op.params.intrinsic_dim},
                 {"shape", op.params.shape},
                 {"pinv_tol", op.params.pinv_tol},
                 {"stencil_size", op.params.stencil_size},
                 {"degree", op.params.degree}}}};
  write_json(json_path, meta);
}

DiscreteOperator load_operator(const std::string& coo_path, const std::string& json_path) {
  const Json meta = read_json(json_path);
  const Index n = meta.at("N").get<Index>();
  std::ifstream in(coo_path);
  if (!in) throw IoError("cannot open " + coo_path);
  std::string line;
  std::getline(in, line);
  std::vector<Triplet> trips;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw IoError("malformed operator row in " + coo_path);
    trips.emplace_back(std::stoll(f[0]), std::stoll(f[1]), std::strtod(f[2].c_str(), nullptr));
  }
  SparseMatrix s(n, n);
  s.setFromTriplets(trips.begin(), trips.end());

  DiscreteOperator op;
  op.estimator = estimator_from_string(meta.at("estimator").get<std::string>());
  op.kappa_hash = meta.value("kappa_hash", "");
  const Json& p = meta.at("params");
  op.params.epsilon = p.value("epsilon", 0.0);
  op.params.intrinsic_dim = p.value("intrinsic_dim", 2);
  op.params.shape = p.value("shape", 0.0);
  op.params.pinv_tol = p.value("pinv_tol", 0.0);
  op.params.stencil_size = p.value("stencil_size", Index{0});
  op.params.degree = p.value("degree", Index{0});
  if (meta.value("dense", false))
    op.matrix = Matrix(s);
  else
    op.matrix = std::move(s);
  return op;
}

// ----------------------------------------------------------------- bandwidth

Vector default_epsilon_grid(Index count) {
  if (count < 3) throw ParameterError("epsilon grid needs at least 3 points");
  return Vector::LinSpaced(count, std::log(std::pow(2.0, -14.0)), std::log(10.0)).array().exp();
}

BandwidthReport tune_epsilon(const NeighborIndex& knn, const Vector& grid) {
  const Index g = grid.size();
  if (g < 3) throw ParameterError("epsilon grid needs at least 3 points");
  if ((grid.array() <= 0.0).any()) throw ParameterError("epsilon grid must be positive");
  for (Index j = 1; j < g; ++j)
    if (!(grid(j) > grid(j - 1))) throw ParameterError("epsilon grid must be increasing");

  const double count = static_cast<double>(knn.distances.size());
  BandwidthReport rep;
  rep.epsilon_grid = grid;
  rep.log_s.resize(g);
  for (Index j = 0; j < g; ++j) {
    const double s = (-knn.distances.array() / (4.0 * grid(j))).exp().sum() / count;
    rep.log_s(j) = std::log(s);
  }

  const Vector log_eps = grid.array().log();
  rep.slopes.resize(g);
  for (Index j = 0; j < g; ++j) {
    const Index lo = std::max<Index>(j - 1, 0);
    const Index hi = std::min<Index>(j + 1, g - 1);
    rep.slopes(j) = (rep.log_s(hi) - rep.log_s(lo)) / (log_eps(hi) - log_eps(lo));
  }
  rep.max_slope = rep.slopes.maxCoeff();
  if (!(rep.max_slope >= 0.5)) throw DegenerateError("bandwidth sweep found no slope above 1/2; degenerate cloud");
  rep.estimated_d = static_cast<int>(std::lround(2.0 * rep.max_slope));

  const double target = 0.5 * rep.estimated_d;
  Index chosen = -1;
  for (Index j = g - 1; j >= 0; --j) {
    if (std::abs(rep.slopes(j) - target) <= 0.05) {
      chosen = j;
      break;
    }
  }
  if (chosen < 0) (rep.slopes.array() - target).abs().minCoeff(&chosen);
  rep.chosen_epsilon = grid(chosen);
  return rep;
}

// ------------------------------------------------------------ diffusion maps

namespace {

std::vector<std::vector<Index>> symmetric_support(const NeighborIndex& knn) {
  const Index n = knn.size();
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < knn.k; ++r) {
      const Index j = knn.indices(i, r);
      adj[static_cast<std::size_t>(i)].push_back(j);
      adj[static_cast<std::size_t>(j)].push_back(i);
    }
  }
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return adj;
}

void check_kappa(const Vector& kappa, Index n) {
  if (kappa.size() != n) throw ShapeError("kappa length must equal cloud size");
  if (!(kappa.array() > 0.0).all() || !kappa.allFinite()) throw ParameterError("kappa must be positive and finite");
}

}  // namespace

DmKernel build_dm_kernel(const Points& points, const NeighborIndex& knn, double epsilon, int d) {
  const Index n = points.rows();
  if (knn.size() != n) throw ShapeError("kNN index does not match the cloud");
  if (!(epsilon > 0.0)) throw ParameterError("DM bandwidth must be positive");
  if (d < 1) throw ParameterError("intrinsic dimension must be positive");

  const auto adj = symmetric_support(knn);
  const double nd = static_cast<double>(n);
  const double h_norm = std::pow(4.0 * std::numbers::pi, -0.5 * d);
  const double q_scale = std::pow(epsilon, -0.5 * d) / nd;

  std::vector<std::vector<double>> h(static_cast<std::size_t>(n));
  Vector q(n);
  parallel_for(n, [&](Index i) {
    const auto& row = adj[static_cast<std::size_t>(i)];
    auto& hi = h[static_cast<std::size_t>(i)];
    hi.resize(row.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double d2 = (points.row(i) - points.row(row[c])).squaredNorm();
      hi[c] = h_norm * std::exp(-d2 / (4.0 * epsilon));
      sum += hi[c];
    }
    q(i) = q_scale * sum;
  });
  for (Index i = 0; i < n; ++i)
    if (!(q(i) > 0.0)) throw DegenerateError("DM density estimate vanished at point " + std::to_string(i));

  const double w_scale = std::pow(epsilon, -0.5 * d - 1.0) / nd;
  SparseMatrix kernel(n, n);
  Eigen::VectorXi nnz(n);
  for (Index i = 0; i < n; ++i) nnz(i) = static_cast<int>(adj[static_cast<std::size_t>(i)].size());
  kernel.reserve(nnz);
  for (Index i = 0; i < n; ++i) {
    const auto& row = adj[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < row.size(); ++c)
      kernel.insert(i, row[c]) = w_scale * h[static_cast<std::size_t>(i)][c] / q(row[c]);
  }
  kernel.makeCompressed();

  DmKernel out;
  out.kernel = std::move(kernel);
  out.q = std::move(q);
  out.epsilon = epsilon;
  out.intrinsic_dim = d;
  return out;
}

SparseMatrix assemble_dm_weights(const DmKernel& kernel, const Vector& kappa) {
  const Index n = kernel.kernel.rows();
  check_kappa(kappa, n);
  SparseMatrix w = kernel.kernel;
  for (Index i = 0; i < n; ++i)
    for (SparseMatrix::InnerIterator it(w, i); it; ++it) it.valueRef() *= std::sqrt(kappa(i) * kappa(it.col()));
  return w;
}

DiscreteOperator assemble_dm_operator(const DmKernel& kernel, const Vector& kappa) {
  SparseMatrix l = assemble_dm_weights(kernel, kappa);
  for (Index i = 0; i < l.rows(); ++i) {
    double sum = 0.0;
    for (SparseMatrix::InnerIterator it(l, i); it; ++it) sum += it.value();
    for (SparseMatrix::InnerIterator it(l, i); it; ++it) {
      if (it.col() == i)
        it.valueRef() = sum - it.value();
      else
        it.valueRef() = -it.value();
    }
  }
  DiscreteOperator op;
  op.matrix = std::move(l);
  op.estimator = Estimator::DM;
  op.params.epsilon = kernel.epsilon;
  op.params.intrinsic_dim = kernel.intrinsic_dim;
  op.kappa_hash = hash_vector(kappa);
  return op;
}

DiscreteOperator build_dm_operator(const Points& points, const NeighborIndex& knn, const Vector& kappa,
                                   double epsilon, int d) {
  check_kappa(kappa, points.rows());
  return assemble_dm_operator(build_dm_kernel(points, knn, epsilon, d), kappa);
}

// ------------------------------------------------------------ tangent frames

TangentFrame estimate_tangent_frame(const Points& points, const NeighborIndex& knn, Index base, int d,
                                    FrameMethod method) {
  if (base < 0 || base >= knn.size()) throw ParameterError("tangent frame base index out of range");
  if (d < 1 || d > 3) throw ParameterError("tangent dimension must be in [1, 3]");
  if (knn.k < d + 1) throw ParameterError("tangent frame needs at least d + 1 neighbours");

  Eigen::Matrix<double, Eigen::Dynamic, 3> nb(knn.k, 3);
  for (Index r = 0; r < knn.k; ++r) nb.row(r) = points.row(knn.indices(base, r));
  const Eigen::RowVector3d mean = nb.colwise().mean();
  const Eigen::Matrix<double, Eigen::Dynamic, 3> centred = nb.rowwise() - mean;
  const Eigen::Matrix3d cov = centred.transpose() * centred;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d lam = eig.eigenvalues();  // ascending
  if (!(lam(3 - d) > 1e-12 * std::max(lam(2), 1e-300)) || lam(2) <= 0.0)
    throw DegenerateError("rank-deficient neighbourhood at point " + std::to_string(base));

  TangentFrame frame;
  frame.base_index = base;
  frame.vectors.resize(3, d);
  for (int c = 0; c < d; ++c) frame.vectors.col(c) = eig.eigenvectors().col(2 - c);

  if (method == FrameMethod::Quadratic && d == 2 && knn.k >= 6) {
    // Fit the normal offset c = g.(a, b) + quadratic terms and tilt the frame
    // by the fitted slope; repeated twice.
    for (int pass = 0; pass < 2; ++pass) {
      const Eigen::Vector3d n = frame.vectors.col(0).cross(frame.vectors.col(1)).normalized();
      const Eigen::RowVector3d x0 = points.row(base);
      Eigen::Matrix<double, Eigen::Dynamic, 5> a(knn.k, 5);
      Vector rhs(knn.k);
      for (Index r = 0; r < knn.k; ++r) {
        const Eigen::Vector3d dx = (nb.row(r) - x0).transpose();
        const double s = frame.vectors.col(0).dot(dx);
        const double t = frame.vectors.col(1).dot(dx);
        a.row(r) << s, t, s * s, s * t, t * t;
        rhs(r) = n.dot(dx);
      }
      const Eigen::Matrix<double, 5, 1> coef = a.colPivHouseholderQr().solve(rhs);
      if (!coef.allFinite()) break;
      Eigen::Vector3d t1 = frame.vectors.col(0) + coef(0) * n;
      Eigen::Vector3d t2 = frame.vectors.col(1) + coef(1) * n;
      t1.normalize();
      t2 -= t1.dot(t2) * t1;
      t2.normalize();
      frame.vectors.col(0) = t1;
      frame.vectors.col(1) = t2;
    }
  }
  frame.projector = frame.vectors * frame.vectors.transpose();
  return frame;
}

std::vector<TangentFrame> estimate_tangent_frames(const Points& points, const NeighborIndex& knn, int d,
                                                  FrameMethod method) {
  std::vector<TangentFrame> frames(static_cast<std::size_t>(knn.size()));
  parallel_for(knn.size(), [&](Index i) {
    frames[static_cast<std::size_t>(i)] = estimate_tangent_frame(points, knn, i, d, method);
  });
  return frames;
}

// ----------------------------------------------------------------------- RBF

double default_rbf_shape(const Points& points) {
  if (points.rows() < 2) throw ParameterError("RBF shape heuristic needs two points");
  const Eigen::RowVector3d centroid = points.colwise().mean();
  const double rms = std::sqrt((points.rowwise() - centroid).rowwise().squaredNorm().mean());
  if (!(rms > 0.0)) throw DegenerateError("coincident points; RBF shape undefined");
  return 0.75 / rms;
}

Matrix rbf_interpolation_matrix(const Points& points, double shape) {
  if (!(shape > 0.0)) throw ParameterError("RBF shape must be positive");
  const Index n = points.rows();
  Matrix phi(n, n);
  parallel_for(n, [&](Index j) {
    for (Index i = 0; i < n; ++i) phi(i, j) = inverse_quadratic((points.row(i) - points.row(j)).norm(), shape);
  });
  return phi;
}

Matrix pseudo_inverse_symmetric(const Matrix& a, double tol, Index* rank) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  if (eig.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
  const Vector& lam = eig.eigenvalues();
  std::vector<Index> keep;
  for (Index i = 0; i < lam.size(); ++i)
    if (std::abs(lam(i)) > tol) keep.push_back(i);
  if (rank) *rank = static_cast<Index>(keep.size());
  if (keep.empty()) return Matrix::Zero(a.cols(), a.rows());
  Matrix v(a.rows(), static_cast<Index>(keep.size()));
  Vector inv(static_cast<Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    v.col(static_cast<Index>(c)) = eig.eigenvectors().col(keep[c]);
    inv(static_cast<Index>(c)) = 1.0 / lam(keep[c]);
  }
  return v * inv.asDiagonal() * v.transpose();
}

RbfGradients build_rbf_gradients(const Points& points, const std::vector<TangentFrame>& frames,
                                 const RbfOptions& options) {
  const Index n = points.rows();
  if (n > options.max_points)
    throw ParameterError("RBF operator is dense; N = " + std::to_string(n) + " exceeds the cap of " +
                         std::to_string(options.max_points));
  if (static_cast<Index>(frames.size()) != n) throw ShapeError("one tangent frame per point required");
  if (!(options.pinv_tol >= 0.0)) throw ParameterError("pseudo-inverse tolerance must be non-negative");
  const double s = options.shape > 0.0 ? options.shape : default_rbf_shape(points);

  const Matrix phi = rbf_interpolation_matrix(points, s);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(phi);
  if (eig.info() != Eigen::Success) throw NumericalError("RBF eigensolver failed");
  std::vector<Index> keep;
  for (Index i = 0; i < n; ++i)
    if (std::abs(eig.eigenvalues()(i)) > options.pinv_tol) keep.push_back(i);
  if (keep.empty()) throw DegenerateError("RBF interpolation matrix is numerically rank zero");
  const Index rank = static_cast<Index>(keep.size());
  Matrix v(n, rank);
  Vector inv(rank);
  for (Index c = 0; c < rank; ++c) {
    v.col(c) = eig.eigenvectors().col(keep[static_cast<std::size_t>(c)]);
    inv(c) = 1.0 / eig.eigenvalues()(keep[static_cast<std::size_t>(c)]);
  }

  RbfGradients out;
  out.shape = s;
  out.pinv_tol = options.pinv_tol;
  out.rank = rank;
  const double s2 = s * s;
  for (int l = 0; l < 3; ++l) {
    Matrix b(n, n);
    parallel_for(n, [&](Index i) {
      const Eigen::RowVector3d pl = frames[static_cast<std::size_t>(i)].projector.row(l);
      for (Index j = 0; j < n; ++j) {
        const Eigen::RowVector3d diff = points.row(i) - points.row(j);
        const double den = 1.0 + s2 * diff.squaredNorm();
        b(i, j) = -2.0 * s2 * pl.dot(diff) / (den * den);
      }
    });
    const Matrix bv = b * v;
    out.g[static_cast<std::size_t>(l)] = (bv * inv.asDiagonal()) * v.transpose();
  }
  return out;
}

DiscreteOperator assemble_rbf_operator(const RbfGradients& grads, const Vector& kappa) {
  const Index n = grads.size();
  check_kappa(kappa, n);
  Matrix l = Matrix::Zero(n, n);
  for (const Matrix& g : grads.g) l.noalias() -= g * (kappa.asDiagonal() * g);
  DiscreteOperator op;
  op.matrix = std::move(l);
  op.estimator = Estimator::RBF;
  op.params.shape = grads.shape;
  op.params.pinv_tol = grads.pinv_tol;
  op.kappa_hash = hash_vector(kappa);
  return op;
}

Vector apply_rbf_operator(const RbfGradients& grads, const Vector& kappa, const Vector& u) {
  const Index n = grads.size();
  check_kappa(kappa, n);
  if (u.size() != n) throw ShapeError("operator/vector size mismatch");
  Vector out = Vector::Zero(n);
  for (const Matrix& g : grads.g) out.noalias() -= g * kappa.cwiseProduct(g * u);
  return out;
}

DiscreteOperator build_rbf_operator(const Points& points, const Vector& kappa, const RbfOptions& options) {
  check_kappa(kappa, points.rows());
  const NeighborIndex knn = build_knn(points, std::min(kRbfFrameNeighbors, points.rows()));
  return assemble_rbf_operator(
      build_rbf_gradients(points, estimate_tangent_frames(points, knn, 2, options.frames), options), kappa);
}

// ---------------------------------------------------------------------- GMLS

std::vector<std::array<int, 2>> monomial_exponents(Index degree) {
  std::vector<std::array<int, 2>> out;
  for (int total = 0; total <= degree; ++total)
    for (int a = total; a >= 0; --a) out.push_back({a, total - a});
  return out;
}

namespace {

double ipow(double x, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= x;
  return r;
}

}  // namespace

GmlsRow gmls_row(const Points& stencil, const std::vector<Eigen::Matrix3d>& projectors,
                 const Eigen::Matrix<double, 3, Eigen::Dynamic>& base_frame, Index degree) {
  const Index k = stencil.rows();
  if (base_frame.cols() != 2) throw ParameterError("GMLS rows are implemented for surfaces (d = 2)");
  if (static_cast<Index>(projectors.size()) != k) throw ShapeError("one projector per stencil point required");
  const auto alphas = monomial_exponents(degree);
  const Index m = static_cast<Index>(alphas.size());
  if (k <= m) throw ParameterError("GMLS stencil must exceed the polynomial basis size");

  const Eigen::RowVector3d x0 = stencil.row(0);
  double h = 0.0;
  for (Index r = 1; r < k; ++r) h = std::max(h, (stencil.row(r) - x0).norm());
  if (!(h > 0.0)) throw DegenerateError("GMLS stencil collapsed to a point");

  Matrix z(k, 2);
  for (Index r = 0; r < k; ++r) z.row(r) = (stencil.row(r) - x0) * base_frame / h;

  GmlsRow row;
  row.vandermonde.resize(k, m);
  for (Index r = 0; r < k; ++r)
    for (Index a = 0; a < m; ++a)
      row.vandermonde(r, a) = ipow(z(r, 0), alphas[static_cast<std::size_t>(a)][0]) *
                              ipow(z(r, 1), alphas[static_cast<std::size_t>(a)][1]);

  const Matrix normal = row.vandermonde.transpose() * row.vandermonde;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(normal, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmax > 0.0) || !(lmin > 1e-13 * lmax)) throw DegenerateError("GMLS normal equations are singular");
  const Matrix a = normal.ldlt().solve(row.vandermonde.transpose());  // m x K

  std::array<Matrix, 3> g;
  for (int l = 0; l < 3; ++l) {
    Matrix b(k, m);
    for (Index r = 0; r < k; ++r) {
      for (Index c = 0; c < m; ++c) {
        const auto& al = alphas[static_cast<std::size_t>(c)];
        Eigen::Vector3d grad = Eigen::Vector3d::Zero();
        if (al[0] > 0) grad += al[0] * ipow(z(r, 0), al[0] - 1) * ipow(z(r, 1), al[1]) * base_frame.col(0);
        if (al[1] > 0) grad += al[1] * ipow(z(r, 0), al[0]) * ipow(z(r, 1), al[1] - 1) * base_frame.col(1);
        b(r, c) = projectors[static_cast<std::size_t>(r)].row(l).dot(grad) / h;
      }
    }
    g[static_cast<std::size_t>(l)] = b * a;
  }

  row.gradient.resize(3, k);
  row.laplacian = Vector::Zero(k);
  for (int l = 0; l < 3; ++l) {
    const Matrix& gl = g[static_cast<std::size_t>(l)];
    row.gradient.row(l) = gl.row(0);
    row.laplacian += (gl.row(0) * gl).transpose();
  }
  return row;
}

StabilizedRow stabilize_row(const Vector& weights, const Matrix& vandermonde) {
  const Index k = weights.size();
  const Index m = vandermonde.cols();
  if (vandermonde.rows() != k) throw ShapeError("Vandermonde rows must match the stencil");
  if (k < 2) throw ParameterError("stabilization needs at least two stencil weights");

  StabilizedRow out;
  out.weights = weights;
  const double min_off = weights.tail(k - 1).minCoeff();
  if (weights(0) < 0.0 && min_off >= 0.0) return out;

  const double scale = weights.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) {
    out.feasible = false;
    return out;
  }
  const Vector w = weights / scale;
  const double cmax = std::abs(std::min(min_off, 0.0)) / scale;

  // Columns: d+ (K), d- (K), C, t_1, s_k (K-1), s_C.
  const Index nv = 3 * k + 2;
  const Index nr = m + k + 1;
  const Index col_c = 2 * k;
  const Index col_t = 2 * k + 1;
  const Index col_s = 2 * k + 2;
  const Index col_sc = 3 * k + 1;
  Matrix a = Matrix::Zero(nr, nv);
  Vector b = Vector::Zero(nr);
  a.block(0, 0, m, k) = vandermonde.transpose();
  a.block(0, k, m, k) = -vandermonde.transpose();
  a(m, 0) = 1.0;
  a(m, k) = -1.0;
  a(m, col_t) = 1.0;
  b(m) = -w(0);
  for (Index j = 1; j < k; ++j) {
    const Index r = m + j;
    a(r, j) = 1.0;
    a(r, k + j) = -1.0;
    a(r, col_c) = 1.0;
    a(r, col_s + j - 1) = -1.0;
    b(r) = -w(j);
  }
  a(m + k, col_c) = 1.0;
  a(m + k, col_sc) = 1.0;
  b(m + k) = cmax;
  Vector c = Vector::Zero(nv);
  c(col_c) = 1.0;

  const LpResult lp = solve_standard_lp(c, a, b);
  if (lp.status != LpStatus::Optimal) {
    out.feasible = false;
    return out;
  }
  Vector delta = lp.x.head(k) - lp.x.segment(k, k);
  // Remove round-off in the moment constraints.
  const Matrix pt = vandermonde.transpose();
  delta -= vandermonde * (pt * vandermonde).ldlt().solve(pt * delta);
  const Vector w_hat = (w + delta) * scale;
  if (!(w_hat(0) < 0.0)) {
    out.feasible = false;
    return out;
  }
  out.weights = w_hat;
  out.c = lp.x(col_c) * scale;
  return out;
}

GmlsStencils build_gmls_stencils(const Points& points, const NeighborIndex& knn, Index degree, bool stabilize,
                                 FrameMethod frame_method) {
  const Index n = points.rows();
  if (degree < 2) throw ParameterError("GMLS needs polynomial degree >= 2");
  const Index k = knn.k;
  if (k <= polynomial_dim(degree, 2)) throw ParameterError("GMLS stencil size K must exceed the basis size m");
  if (knn.size() != n) throw ShapeError("kNN index does not match the cloud");

  const auto frames = estimate_tangent_frames(points, knn, 2, frame_method);
  GmlsStencils out;
  out.degree = degree;
  out.stencil = knn.indices;
  for (auto& g : out.gradient) g.resize(n, k);
  out.laplacian.resize(n, k);
  std::vector<char> failed(static_cast<std::size_t>(n), 0);

  parallel_for(n, [&](Index i) {
    Points st(k, 3);
    std::vector<Eigen::Matrix3d> proj(static_cast<std::size_t>(k));
    for (Index r = 0; r < k; ++r) {
      const Index j = knn.indices(i, r);
      st.row(r) = points.row(j);
      proj[static_cast<std::size_t>(r)] = frames[static_cast<std::size_t>(j)].projector;
    }
    GmlsRow row;
    try {
      row = gmls_row(st, proj, frames[static_cast<std::size_t>(i)].vectors, degree);
    } catch (const DegenerateError& e) {
      throw DegenerateError(std::string(e.what()) + " at point " + std::to_string(i));
    }
    for (int l = 0; l < 3; ++l) out.gradient[static_cast<std::size_t>(l)].row(i) = row.gradient.row(l);
    if (stabilize) {
      const StabilizedRow s = stabilize_row(row.laplacian, row.vandermonde);
      out.laplacian.row(i) = s.weights.transpose();
      failed[static_cast<std::size_t>(i)] = s.feasible ? 0 : 1;
    } else {
      out.laplacian.row(i) = row.laplacian.transpose();
    }
  });
  out.stabilization_failed.assign(failed.begin(), failed.end());
  return out;
}

DiscreteOperator assemble_gmls_operator(const GmlsStencils& st, const Vector& kappa) {
  const Index n = st.size();
  const Index k = st.stencil_size();
  check_kappa(kappa, n);
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(n * k));
  Vector vals(k);
  for (Index i = 0; i < n; ++i) {
    vals = -kappa(i) * st.laplacian.row(i).transpose();
    for (int l = 0; l < 3; ++l) {
      const auto& g = st.gradient[static_cast<std::size_t>(l)];
      double gk = 0.0;
      for (Index r = 0; r < k; ++r) gk += g(i, r) * kappa(st.stencil(i, r));
      vals -= gk * g.row(i).transpose();
    }
    for (Index r = 0; r < k; ++r) trips.emplace_back(i, st.stencil(i, r), vals(r));
  }
  SparseMatrix l(n, n);
  l.setFromTriplets(trips.begin(), trips.end());
  DiscreteOperator op;
  op.matrix = std::move(l);
  op.estimator = Estimator::GMLS;
  op.params.stencil_size = k;
  op.params.degree = st.degree;
  op.kappa_hash = hash_vector(kappa);
  return op;
}

DiscreteOperator build_gmls_operator(const Points& points, const NeighborIndex& knn, const Vector& kappa,
                                     Index degree) {
  check_kappa(kappa, points.rows());
  return assemble_gmls_operator(build_gmls_stencils(points, knn, degree), kappa);
}

// ------------------------------------------------------------------- factory

OperatorFactory::OperatorFactory(const Points& points, const OperatorSettings& settings)
    : settings_(settings), n_(points.rows()) {
  switch (settings.estimator) {
    case Estimator::DM: {
      const Index k = settings.dm_neighbors > 0 ? std::min(settings.dm_neighbors, n_) : default_dm_neighbors(n_);
      const NeighborIndex knn = build_knn(points, k);
      double eps = settings.dm_epsilon;
      if (!(eps > 0.0)) {
        bandwidth_ = tune_epsilon(knn, default_epsilon_grid());
        eps = bandwidth_->chosen_epsilon;
      }
      if (!(settings.dm_epsilon_scale > 0.0)) throw ParameterError("DM epsilon scale must be positive");
      epsilon_ = eps * settings.dm_epsilon_scale;
      dm_ = build_dm_kernel(points, knn, epsilon_, settings.intrinsic_dim);
      break;
    }
    case Estimator::RBF: {
      const NeighborIndex knn = build_knn(points, std::min(kRbfFrameNeighbors, n_));
      rbf_ = build_rbf_gradients(points, estimate_tangent_frames(points, knn, 2, settings.rbf.frames), settings.rbf);
      break;
    }
    case Estimator::GMLS: {
      const Index k = settings.gmls_stencil > 0 ? settings.gmls_stencil : default_gmls_stencil(settings.gmls_degree);
      if (k > n_) throw ParameterError("GMLS stencil larger than the cloud");
      const NeighborIndex knn = build_knn(points, k);
      gmls_ = build_gmls_stencils(points, knn, settings.gmls_degree, settings.gmls_stabilize);
      auto to_sparse = [&](const Matrix& w) {
        std::vector<Triplet> trips;
        trips.reserve(static_cast<std::size_t>(w.size()));
        for (Index i = 0; i < n_; ++i)
          for (Index r = 0; r < k; ++r) trips.emplace_back(i, gmls_->stencil(i, r), w(i, r));
        SparseMatrix out(n_, n_);
        out.setFromTriplets(trips.begin(), trips.end());
        return out;
      };
      for (std::size_t l = 0; l < 3; ++l) gmls_gradient_[l] = to_sparse(gmls_->gradient[l]);
      gmls_laplacian_ = to_sparse(gmls_->laplacian);
      break;
    }
  }
}

DiscreteOperator OperatorFactory::build(const Vector& kappa) const {
  if (dm_) return assemble_dm_operator(*dm_, kappa);
  if (rbf_) return assemble_rbf_operator(*rbf_, kappa);
  return assemble_gmls_operator(*gmls_, kappa);
}

Matrix OperatorFactory::apply_many(const Matrix& kappa, const Matrix& u, bool transpose) const {
  if (kappa.rows() != n_ || u.rows() != n_ || kappa.cols() != u.cols())
    throw ShapeError("apply_many expects N x S kappa and u");
  if (!(kappa.array() > 0.0).all()) throw ParameterError("kappa must be positive");
  if (dm_) {
    const Matrix root = kappa.cwiseSqrt();
    const Matrix rowsum = root.cwiseProduct(dm_->kernel * root);
    const Matrix ku = root.cwiseProduct(u);
    const Matrix wu = transpose ? Matrix(dm_->kernel.transpose() * ku) : Matrix(dm_->kernel * ku);
    return rowsum.cwiseProduct(u) - root.cwiseProduct(wu);
  }
  Matrix out = Matrix::Zero(n_, u.cols());
  if (rbf_) {
    for (const Matrix& g : rbf_->g) {
      if (transpose)
        out.noalias() -= g.transpose() * kappa.cwiseProduct(g.transpose() * u);
      else
        out.noalias() -= g * kappa.cwiseProduct(g * u);
    }
    return out;
  }
  for (const SparseMatrix& g : gmls_gradient_) {
    const Matrix gk = g * kappa;
    if (transpose)
      out -= g.transpose() * gk.cwiseProduct(u);
    else
      out -= gk.cwiseProduct(g * u);
  }
  if (transpose)
    out -= gmls_laplacian_.transpose() * kappa.cwiseProduct(u);
  else
    out -= kappa.cwiseProduct(gmls_laplacian_ * u);
  return out;
}

Vector OperatorFactory::apply(const Vector& kappa, const Vector& u) const {
  if (rbf_) return apply_rbf_operator(*rbf_, kappa, u);
  return build(kappa).apply(u);
}

}  // namespace mol

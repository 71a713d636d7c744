#pragma once

// Point clouds on the benchmark manifolds (torus, semi-torus), exact kNN
// queries and the interior / near-boundary split.

#include "mol/core.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace mol {

enum class ManifoldKind { Torus, SemiTorus, Custom };

std::string to_string(ManifoldKind kind);
ManifoldKind manifold_from_string(const std::string& name);

// (theta, phi) -> ambient point. theta runs around the tube, phi around the
// symmetry axis; theta = phi = 0 maps to (R + r, 0, 0).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> torus_embedding(Scalar theta, Scalar phi, Scalar R, Scalar r) {
  using std::cos;
  using std::sin;
  const Scalar rho = R + r * cos(theta);
  return {rho * cos(phi), rho * sin(phi), r * sin(theta)};
}

// Inverse of torus_embedding for points on (or near) the surface, with both
// angles wrapped to [0, 2pi).
template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> torus_intrinsic(const Eigen::Matrix<Scalar, 3, 1>& p, Scalar R) {
  using std::atan2;
  using std::hypot;
  constexpr Scalar two_pi = 2 * std::numbers::pi_v<Scalar>;
  Scalar phi = atan2(p.y(), p.x());
  Scalar theta = atan2(p.z(), hypot(p.x(), p.y()) - R);
  if (phi < 0) phi += two_pi;
  if (theta < 0) theta += two_pi;
  return {theta, phi};
}

// Outward unit normal of the torus at (theta, phi).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> torus_normal(Scalar theta, Scalar phi) {
  using std::cos;
  using std::sin;
  return {cos(theta) * cos(phi), cos(theta) * sin(phi), sin(theta)};
}

struct PointCloud {
  Points points;                    // N x 3 ambient coordinates
  std::optional<Intrinsic> intrinsic;  // (theta, phi) per point when known
  ManifoldKind kind = ManifoldKind::Custom;
  double major_radius = 0.0;
  double minor_radius = 0.0;
  std::uint64_t seed = 0;

  Index size() const { return points.rows(); }
  bool has_boundary() const { return kind == ManifoldKind::SemiTorus; }
};

// I.i.d. uniform samples in intrinsic coordinates: [0,2pi)^2 for the torus,
// [0,2pi) x [0,pi] for the semi-torus.
PointCloud sample_cloud(ManifoldKind kind, Index n, double R, double r, std::uint64_t seed);

// Equi-spaced intrinsic grid (rows along theta, cols along phi). Periodic
// directions exclude the seam duplicate; the semi-torus phi range includes
// both boundary circles.
PointCloud grid_cloud(ManifoldKind kind, Index rows, Index cols, double R, double r);

// Builds a Custom cloud from raw coordinates.
PointCloud custom_cloud(Points points);

// Exact k nearest neighbours by ambient distance. Row i lists i itself first
// (distance 0), then neighbours by non-decreasing squared distance; ties are
// broken by index.
struct NeighborIndex {
  Index k = 0;
  IndexMatrix indices;  // N x k
  Matrix distances;     // N x k, squared

  Index size() const { return indices.rows(); }
};

NeighborIndex build_knn(const Points& points, Index k);

inline Index default_dm_neighbors(Index n) {
  return std::min<Index>(n, static_cast<Index>(std::ceil(1.5 * std::sqrt(static_cast<double>(n)))));
}

struct BoundarySplit {
  std::vector<Index> interior;       // distance to boundary > epsilon
  std::vector<Index> near_boundary;  // complement
  double epsilon = 0.0;

  Index size() const { return static_cast<Index>(interior.size() + near_boundary.size()); }
  // Per-point flag, true for near-boundary points.
  std::vector<bool> near_mask() const;
};

// Geodesic distance to the boundary for the semi-torus, (R + r cos theta)
// min(phi, pi - phi). Requires intrinsic coordinates.
Vector boundary_distance(const PointCloud& cloud);

// Torus clouds have no boundary and return interior = everything.
BoundarySplit split_near_boundary(const PointCloud& cloud, double epsilon);
BoundarySplit split_near_boundary(const PointCloud& cloud, double epsilon,
                                  const std::function<double(Index)>& distance_to_boundary);

// max over probes of the distance to the nearest sample.
double fill_distance(const Points& samples, const Points& probes);

// Fill distance against a 128 x 128 intrinsic probe grid when the manifold is
// known; max nearest-neighbour distance otherwise.
double estimate_fill_distance(const PointCloud& cloud);

inline double default_boundary_epsilon(const PointCloud& cloud) {
  return 2.0 * estimate_fill_distance(cloud);
}

// CSV `idx,x,y,z,theta,phi` plus a manifest JSON next to it.
void save_cloud(const PointCloud& cloud, const std::string& csv_path, const std::string& manifest_path);
PointCloud load_cloud(const std::string& csv_path, const std::string& manifest_path);

}  // namespace mol

#include "mol/geometry.hpp"

#include "mol/io.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace mol {

namespace {

constexpr double kPi = std::numbers::pi;

void check_radii(double R, double r) {
  if (!(r > 0.0) || !(R > r)) throw ParameterError("radii must satisfy R > r > 0");
}

}  // namespace

std::string to_string(ManifoldKind kind) {
  switch (kind) {
    case ManifoldKind::Torus: return "torus";
    case ManifoldKind::SemiTorus: return "semi-torus";
    case ManifoldKind::Custom: return "custom";
  }
  return "custom";
}

ManifoldKind manifold_from_string(const std::string& name) {
  if (name == "torus") return ManifoldKind::Torus;
  if (name == "semi-torus" || name == "semitorus") return ManifoldKind::SemiTorus;
  if (name == "custom") return ManifoldKind::Custom;
  throw ConfigError("unknown manifold: " + name);
}

PointCloud sample_cloud(ManifoldKind kind, Index n, double R, double r, std::uint64_t seed) {
  if (kind == ManifoldKind::Custom) throw ParameterError("cannot sample a custom manifold");
  if (n < 1) throw ParameterError("cloud size must be positive");
  check_radii(R, r);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> theta_dist(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> phi_dist(0.0, kind == ManifoldKind::Torus ? 2.0 * kPi : kPi);

  PointCloud cloud;
  cloud.kind = kind;
  cloud.major_radius = R;
  cloud.minor_radius = r;
  cloud.seed = seed;
  cloud.points.resize(n, 3);
  Intrinsic angles(n, 2);
  for (Index i = 0; i < n; ++i) {
    const double theta = theta_dist(rng);
    const double phi = phi_dist(rng);
    angles.row(i) << theta, phi;
    cloud.points.row(i) = torus_embedding(theta, phi, R, r).transpose();
  }
  cloud.intrinsic = std::move(angles);
  return cloud;
}

PointCloud grid_cloud(ManifoldKind kind, Index rows, Index cols, double R, double r) {
  if (kind == ManifoldKind::Custom) throw ParameterError("cannot grid a custom manifold");
  if (rows < 1 || cols < 1) throw ParameterError("grid shape must be positive");
  check_radii(R, r);

  PointCloud cloud;
  cloud.kind = kind;
  cloud.major_radius = R;
  cloud.minor_radius = r;
  cloud.points.resize(rows * cols, 3);
  Intrinsic angles(rows * cols, 2);
  for (Index a = 0; a < rows; ++a) {
    const double theta = 2.0 * kPi * static_cast<double>(a) / static_cast<double>(rows);
    for (Index b = 0; b < cols; ++b) {
      double phi;
      if (kind == ManifoldKind::Torus) {
        phi = 2.0 * kPi * static_cast<double>(b) / static_cast<double>(cols);
      } else {
        phi = cols == 1 ? 0.5 * kPi : kPi * static_cast<double>(b) / static_cast<double>(cols - 1);
      }
      const Index i = a * cols + b;
      angles.row(i) << theta, phi;
      cloud.points.row(i) = torus_embedding(theta, phi, R, r).transpose();
    }
  }
  cloud.intrinsic = std::move(angles);
  return cloud;
}

PointCloud custom_cloud(Points points) {
  if (points.rows() < 1) throw ParameterError("cloud size must be positive");
  PointCloud cloud;
  cloud.points = std::move(points);
  cloud.kind = ManifoldKind::Custom;
  return cloud;
}

NeighborIndex build_knn(const Points& points, Index k) {
  const Index n = points.rows();
  if (k < 1 || k > n) throw ParameterError("kNN requires 1 <= k <= N");

  NeighborIndex knn;
  knn.k = k;
  knn.indices.resize(n, k);
  knn.distances.resize(n, k);

  parallel_for(n, [&](Index i) {
    std::vector<std::pair<double, Index>> cand;
    cand.reserve(static_cast<std::size_t>(n - 1));
    const Eigen::RowVector3d p = points.row(i);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((points.row(j) - p).squaredNorm(), j);
    }
    const auto take = static_cast<std::ptrdiff_t>(k - 1);
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    knn.indices(i, 0) = i;
    knn.distances(i, 0) = 0.0;
    for (Index r = 1; r < k; ++r) {
      knn.indices(i, r) = cand[static_cast<std::size_t>(r - 1)].second;
      knn.distances(i, r) = cand[static_cast<std::size_t>(r - 1)].first;
    }
  });
  return knn;
}

std::vector<bool> BoundarySplit::near_mask() const {
  std::vector<bool> mask(static_cast<std::size_t>(size()), false);
  for (Index i : near_boundary) mask[static_cast<std::size_t>(i)] = true;
  return mask;
}

Vector boundary_distance(const PointCloud& cloud) {
  if (cloud.kind != ManifoldKind::SemiTorus)
    throw ParameterError("analytic boundary distance is only defined for the semi-torus");
  if (!cloud.intrinsic) throw ParameterError("boundary distance needs intrinsic coordinates");
  const Intrinsic& ang = *cloud.intrinsic;
  Vector dist(cloud.size());
  for (Index i = 0; i < cloud.size(); ++i) {
    const double theta = ang(i, 0);
    const double phi = ang(i, 1);
    dist(i) = (cloud.major_radius + cloud.minor_radius * std::cos(theta)) * std::min(phi, kPi - phi);
  }
  return dist;
}

BoundarySplit split_near_boundary(const PointCloud& cloud, double epsilon,
                                  const std::function<double(Index)>& distance_to_boundary) {
  if (!(epsilon >= 0.0)) throw ParameterError("boundary epsilon must be non-negative");
  BoundarySplit split;
  split.epsilon = epsilon;
  for (Index i = 0; i < cloud.size(); ++i) {
    if (distance_to_boundary(i) > epsilon)
      split.interior.push_back(i);
    else
      split.near_boundary.push_back(i);
  }
  return split;
}

BoundarySplit split_near_boundary(const PointCloud& cloud, double epsilon) {
  if (cloud.kind == ManifoldKind::Torus) {
    BoundarySplit split;
    split.epsilon = epsilon;
    split.interior.resize(static_cast<std::size_t>(cloud.size()));
    std::iota(split.interior.begin(), split.interior.end(), Index{0});
    return split;
  }
  if (cloud.kind == ManifoldKind::Custom)
    throw ParameterError("custom clouds need a boundary-distance callback");
  const Vector dist = boundary_distance(cloud);
  return split_near_boundary(cloud, epsilon, [&dist](Index i) { return dist(i); });
}

double fill_distance(const Points& samples, const Points& probes) {
  if (samples.rows() == 0) throw ParameterError("fill distance needs samples");
  Vector best(probes.rows());
  parallel_for(probes.rows(), [&](Index p) {
    best(p) = (samples.rowwise() - probes.row(p)).rowwise().squaredNorm().minCoeff();
  });
  return std::sqrt(best.maxCoeff());
}

double estimate_fill_distance(const PointCloud& cloud) {
  if (cloud.kind == ManifoldKind::Custom) {
    if (cloud.size() < 2) return 0.0;
    const NeighborIndex knn = build_knn(cloud.points, 2);
    return std::sqrt(knn.distances.col(1).maxCoeff());
  }
  const PointCloud probes = grid_cloud(cloud.kind, 128, 128, cloud.major_radius, cloud.minor_radius);
  return fill_distance(cloud.points, probes.points);
}

void save_cloud(const PointCloud& cloud, const std::string& csv_path, const std::string& manifest_path) {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot open " + csv_path);
  out << "idx,x,y,z,theta,phi\n";
  for (Index i = 0; i < cloud.size(); ++i) {
    out << i << ',' << format_double(cloud.points(i, 0)) << ',' << format_double(cloud.points(i, 1)) << ','
        << format_double(cloud.points(i, 2)) << ',';
    if (cloud.intrinsic)
      out << format_double((*cloud.intrinsic)(i, 0)) << ',' << format_double((*cloud.intrinsic)(i, 1));
    else
      out << "nan,nan";
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + csv_path);

  Json manifest = {{"kind", to_string(cloud.kind)},
                   {"N", cloud.size()},
                   {"R", cloud.major_radius},
                   {"r", cloud.minor_radius},
                   {"seed", cloud.seed},
                   {"has_intrinsic", cloud.intrinsic.has_value()}};
  write_json(manifest_path, manifest);
}

PointCloud load_cloud(const std::string& csv_path, const std::string& manifest_path) {
  const Json manifest = read_json(manifest_path);
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("idx,x,y,z,theta,phi", 0) != 0) throw IoError("unexpected cloud header in " + csv_path);

  std::vector<std::array<double, 5>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 6) throw IoError("malformed cloud row in " + csv_path);
    std::array<double, 5> row{};
    for (std::size_t c = 0; c < 5; ++c) row[c] = std::strtod(fields[c + 1].c_str(), nullptr);
    rows.push_back(row);
  }

  PointCloud cloud;
  cloud.kind = manifold_from_string(manifest.at("kind").get<std::string>());
  cloud.major_radius = manifest.at("R").get<double>();
  cloud.minor_radius = manifest.at("r").get<double>();
  cloud.seed = manifest.at("seed").get<std::uint64_t>();
  const Index n = static_cast<Index>(rows.size());
  if (n != manifest.at("N").get<Index>()) throw IoError("cloud size disagrees with manifest");
  cloud.points.resize(n, 3);
  Intrinsic ang(n, 2);
  for (Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    cloud.points.row(i) << row[0], row[1], row[2];
    ang.row(i) << row[3], row[4];
  }
  if (manifest.value("has_intrinsic", true)) cloud.intrinsic = std::move(ang);
  return cloud;
}

}  // namespace mol

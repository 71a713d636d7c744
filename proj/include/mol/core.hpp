#pragma once

// Shared types for the meshfree operator-learning toolkit: Eigen aliases,
// the error hierarchy, seeding helpers and a deterministic parallel_for.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace mol {

using Index = Eigen::Index;

template <typename Scalar>
using PointsT = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;
template <typename Scalar>
using IntrinsicT = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using SparseT = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

using Points = PointsT<double>;
using Intrinsic = IntrinsicT<double>;
using Vector = VectorT<double>;
using Matrix = MatrixT<double>;
using SparseMatrix = SparseT<double>;
using Triplet = Eigen::Triplet<double>;
using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Errors. Every failure mode named by a module contract maps onto one of
// these; the CLI turns them into exit codes (2 = usage/config, 3 = numerics).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
// Degenerate geometry: rank-deficient stencils, empty kernels, ...
class DegenerateError : public Error {
 public:
  using Error::Error;
};
class SolverError : public Error {
 public:
  using Error::Error;
};
class ConvergenceError : public Error {
 public:
  using Error::Error;
};
class NumericalError : public Error {
 public:
  using Error::Error;
};

// splitmix64 finalizer; used to derive independent per-sample seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t k) {
  return mix_seed(mix_seed(mix_seed(base) ^ stream) ^ k);
}

// FNV-1a over raw bytes, rendered as 16 hex digits.
std::string hash_bytes(const void* data, std::size_t size);

template <typename Derived>
std::string hash_vector(const Eigen::DenseBase<Derived>& v) {
  const Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> tmp = v.derived().reshaped();
  return hash_bytes(tmp.data(), sizeof(typename Derived::Scalar) * static_cast<std::size_t>(tmp.size()));
}

// Thread count for internal loops: MOL_THREADS if set, otherwise hardware.
int thread_count();

// Runs body(i) for i in [0, n). Each index is handled by exactly one thread and
// bodies must only write to index-owned storage, so results never depend on
// the thread count.
void parallel_for(Index n, const std::function<void(Index)>& body);

}  // namespace mol

#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

#include "minn/mesh.hpp"

namespace minn {

enum class KernelKind { ScaledGauss, Gauss, Cauchy };

/// Stationary covariance in d = |x - y|:
///   ScaledGauss  scale * exp(-d^2 / 2)
///   Gauss        scale * exp(-d^2)
///   Cauchy       scale / (1 + d^2)
struct CovKernel {
  KernelKind kind = KernelKind::Gauss;
  double scale = 1.0;

  double operator()(Point x, Point y) const;

  /// scale = 1 / area.
  static CovKernel scaled_gauss(double area) { return {KernelKind::ScaledGauss, 1.0 / area}; }
  static CovKernel gauss() { return {KernelKind::Gauss, 1.0}; }
  static CovKernel cauchy() { return {KernelKind::Cauchy, 1.0}; }
};

const char* to_string(KernelKind kind);

/// Truncated discrete Karhunen-Loeve basis.
struct KlBasis {
  MeshPtr mesh;
  CovKernel kernel;
  Eigen::VectorXd eigenvalues;  // descending, >= 0
  Eigen::MatrixXd modes;        // N_h x k, orthonormal in the lumped mass inner product

  int k() const { return static_cast<int>(eigenvalues.size()); }
};

/// Top-k eigenpairs of C W v = lambda v, C_ij = Cov(x_i, x_j), W the lumped
/// mass. Dense symmetric solve up to kDenseKlLimit nodes, subspace iteration
/// beyond. Throws Error(InvalidDim) for k outside [0, N_h] and Error(EigFailure).
KlBasis discrete_kl(const CovKernel& kernel, MeshPtr mesh, int k);

inline constexpr int kDenseKlLimit = 2000;

/// sum_m sqrt(lambda_m) xi_m mode_m with xi ~ N(0, 1) drawn from the seed.
FeFunction sample_field(const KlBasis& basis, std::uint64_t seed);

/// Same expansion with caller-provided coefficients xi (length k).
Eigen::VectorXd expand_field(const KlBasis& basis, const Eigen::VectorXd& xi);

/// Nodal square map.
FeFunction square_pushforward(const FeFunction& f);

/// Binary cache: kernel id, scale, k, N_h, eigenvalues, modes (column-major).
void save_kl(const KlBasis& basis, const std::filesystem::path& path);
/// Throws Error(DimMismatch) when the file was built for another node count.
KlBasis load_kl(const std::filesystem::path& path, MeshPtr mesh);

}  // namespace minn

#include "minn/randfield.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>

#include "minn/binary_io.hpp"
#include "minn/error.hpp"

namespace minn {

namespace {

constexpr char kKlMagic[8] = {'M', 'I', 'N', 'N', 'K', 'L', '0', '1'};

Eigen::MatrixXd weighted_covariance(const CovKernel& kernel, const Mesh& mesh, const Eigen::VectorXd& sqrt_w) {
  const auto& v = mesh.vertices();
  const int n = mesh.num_vertices();
  Eigen::MatrixXd s(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) {
      const double c = sqrt_w[i] * kernel(v[i], v[j]) * sqrt_w[j];
      s(i, j) = c;
      s(j, i) = c;
    }
  return s;
}

// Top-k eigenpairs of a symmetric PSD matrix, descending.
void dense_eig(const Eigen::MatrixXd& s, int k, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::EigFailure, "dense symmetric eigensolver failed");
  values = solver.eigenvalues().tail(k).reverse();
  vectors = solver.eigenvectors().rightCols(k).rowwise().reverse();
}

// Block subspace iteration with Rayleigh-Ritz projection.
void subspace_eig(const Eigen::MatrixXd& s, int k, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
  const Eigen::Index n = s.rows();
  const Eigen::Index p = std::min<Eigen::Index>(n, k + std::max(10, k / 2));
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd q(n, p);
  for (auto& x : q.reshaped()) x = g(rng);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(k);
  for (int it = 0; it < 500; ++it) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(s * q);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
    const Eigen::MatrixXd h = q.transpose() * s * q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> small(h);
    if (small.info() != Eigen::Success) break;
    q = q * small.eigenvectors().rowwise().reverse();
    const Eigen::VectorXd cur = small.eigenvalues().reverse().head(k);
    const double scale = std::max(cur.cwiseAbs().maxCoeff(), 1e-300);
    if (it > 0 && (cur - prev).cwiseAbs().maxCoeff() <= 1e-13 * scale) {
      values = cur;
      vectors = q.leftCols(k);
      return;
    }
    prev = cur;
  }
  throw Error(ErrorCode::EigFailure, "subspace iteration did not converge for k = " + std::to_string(k));
}

}  // namespace

double CovKernel::operator()(Point x, Point y) const {
  const double d2 = sq_dist(x, y);
  switch (kind) {
    case KernelKind::ScaledGauss: return scale * std::exp(-0.5 * d2);
    case KernelKind::Gauss: return scale * std::exp(-d2);
    case KernelKind::Cauchy: return scale / (1.0 + d2);
  }
  return 0.0;
}

const char* to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::ScaledGauss: return "scaled_gauss";
    case KernelKind::Gauss: return "gauss";
    case KernelKind::Cauchy: return "cauchy";
  }
  return "?";
}

KlBasis discrete_kl(const CovKernel& kernel, MeshPtr mesh, int k) {
  const int n = mesh->num_vertices();
  if (k < 0 || k > n)
    throw Error(ErrorCode::InvalidDim, "KL truncation k = " + std::to_string(k) + " outside [0, " + std::to_string(n) + "]");
  KlBasis basis{mesh, kernel, Eigen::VectorXd(0), Eigen::MatrixXd(n, 0)};
  if (k == 0) return basis;

  const Eigen::VectorXd sqrt_w = mesh->lumped_mass().cwiseSqrt();
  const Eigen::MatrixXd s = weighted_covariance(kernel, *mesh, sqrt_w);
  Eigen::MatrixXd y;
  if (n <= kDenseKlLimit)
    dense_eig(s, k, basis.eigenvalues, y);
  else
    subspace_eig(s, k, basis.eigenvalues, y);

  for (double& lam : basis.eigenvalues) {
    if (lam < -1e-10 * std::max(1.0, basis.eigenvalues[0]))
      throw Error(ErrorCode::EigFailure, "covariance eigenvalue " + std::to_string(lam) + " is negative");
    lam = std::max(lam, 0.0);
  }
  basis.modes = sqrt_w.cwiseInverse().asDiagonal() * y;
  // Sign convention: largest-magnitude entry of each mode is positive.
  for (int m = 0; m < k; ++m) {
    Eigen::Index at = 0;
    basis.modes.col(m).cwiseAbs().maxCoeff(&at);
    if (basis.modes(at, m) < 0) basis.modes.col(m) *= -1.0;
  }
  return basis;
}

Eigen::VectorXd expand_field(const KlBasis& basis, const Eigen::VectorXd& xi) {
  if (xi.size() != basis.k()) throw Error(ErrorCode::DimMismatch, "KL coefficient count does not match k");
  return basis.modes * (basis.eigenvalues.cwiseSqrt().cwiseProduct(xi));
}

FeFunction sample_field(const KlBasis& basis, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x4b4cu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> g;
  Eigen::VectorXd xi(basis.k());
  for (double& x : xi) x = g(rng);
  return FeFunction(basis.mesh, expand_field(basis, xi));
}

FeFunction square_pushforward(const FeFunction& f) { return FeFunction(f.mesh, f.coeffs.array().square().matrix()); }

void save_kl(const KlBasis& basis, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kKlMagic, sizeof kKlMagic);
  io::write_u64(out, static_cast<std::uint64_t>(basis.kernel.kind));
  io::write_f64(out, basis.kernel.scale);
  io::write_u64(out, static_cast<std::uint64_t>(basis.k()));
  io::write_u64(out, static_cast<std::uint64_t>(basis.modes.rows()));
  io::write_f64s(out, std::span<const double>(basis.eigenvalues.data(), basis.eigenvalues.size()));
  io::write_f64s(out, std::span<const double>(basis.modes.data(), basis.modes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

KlBasis load_kl(const std::filesystem::path& path, MeshPtr mesh) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kKlMagic))
    throw Error(ErrorCode::ParseError, path.string() + ": not a KL cache file");
  try {
    const auto kind = io::read_u64(in);
    if (kind > 2) throw Error(ErrorCode::ParseError, "unknown kernel id " + std::to_string(kind));
    KlBasis b;
    b.mesh = mesh;
    b.kernel = {static_cast<KernelKind>(kind), io::read_f64(in)};
    const auto k = io::read_u64(in);
    const auto n = io::read_u64(in);
    if (n != static_cast<std::uint64_t>(mesh->num_vertices()))
      throw Error(ErrorCode::DimMismatch, "KL cache has " + std::to_string(n) + " nodes, mesh has " +
                                              std::to_string(mesh->num_vertices()));
    if (k > n) throw Error(ErrorCode::ParseError, "k exceeds node count");
    b.eigenvalues.resize(static_cast<Eigen::Index>(k));
    b.modes.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    io::read_f64s(in, std::span<double>(b.eigenvalues.data(), b.eigenvalues.size()));
    io::read_f64s(in, std::span<double>(b.modes.data(), b.modes.size()));
    return b;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DimMismatch) throw;
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace minn

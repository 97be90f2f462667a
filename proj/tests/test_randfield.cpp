#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "minn/error.hpp"
#include "minn/randfield.hpp"

using namespace minn;

namespace {

// Two unit squares 20 apart, each split into 2x2 cells.
MeshPtr two_cluster_mesh() {
  std::vector<Point> v;
  std::vector<Triangle> t;
  for (double ox : {0.0, 20.0}) {
    const int base = static_cast<int>(v.size());
    for (int j = 0; j <= 2; ++j)
      for (int i = 0; i <= 2; ++i) v.push_back({ox + 0.5 * i, 0.5 * j});
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        const int a = base + j * 3 + i;
        t.push_back({a, a + 1, a + 4});
        t.push_back({a, a + 4, a + 3});
      }
  }
  return std::make_shared<Mesh>(Domain::parse("union(rect(0,0,1,1),rect(20,0,21,1))"), v, t);
}

}  // namespace

TEST_CASE("kernels") {
  const Point x{0.3, -0.2}, y{1.0, 0.5};
  const double d2 = sq_dist(x, y);
  CHECK(CovKernel::gauss()(x, y) == doctest::Approx(std::exp(-d2)).epsilon(1e-15));
  CHECK(CovKernel::cauchy()(x, y) == doctest::Approx(1.0 / (1.0 + d2)).epsilon(1e-15));
  CHECK(CovKernel::scaled_gauss(4.0)(x, y) == doctest::Approx(0.25 * std::exp(-d2 / 2)).epsilon(1e-15));
  for (const auto& k : {CovKernel::gauss(), CovKernel::cauchy(), CovKernel::scaled_gauss(2.0)}) {
    CHECK(k(x, x) > 0);
    CHECK(k(x, y) == k(y, x));
  }
}

TEST_CASE("KL spectrum: ordering, trace identity, orthonormality") {
  const auto mesh = build_mesh(Domain::parse("unit_disk"), 0.2);
  REQUIRE(mesh->num_vertices() <= 300);
  const int n = mesh->num_vertices();
  for (const auto& kernel : {CovKernel::gauss(), CovKernel::cauchy(), CovKernel::scaled_gauss(mesh->total_area())}) {
    const auto b = discrete_kl(kernel, mesh, n);
    for (int m = 0; m < n; ++m) CHECK(b.eigenvalues[m] >= 0.0);
    for (int m = 1; m < n; ++m) CHECK(b.eigenvalues[m] <= b.eigenvalues[m - 1]);
    double trace = 0.0;
    for (int i = 0; i < n; ++i) trace += kernel(mesh->vertices()[i], mesh->vertices()[i]) * mesh->lumped_mass()[i];
    CHECK(b.eigenvalues.sum() == doctest::Approx(trace).epsilon(1e-6));
    const Eigen::MatrixXd gram = b.modes.transpose() * mesh->lumped_mass().asDiagonal() * b.modes;
    CHECK((gram - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-8);

    // Each eigenpair satisfies C W v = lambda v against an explicit C.
    Eigen::MatrixXd c(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = kernel(mesh->vertices()[i], mesh->vertices()[j]);
    const Eigen::MatrixXd lhs = c * mesh->lumped_mass().asDiagonal() * b.modes.leftCols(5);
    const Eigen::MatrixXd rhs = b.modes.leftCols(5) * b.eigenvalues.head(5).asDiagonal();
    CHECK((lhs - rhs).norm() <= 1e-9 * rhs.norm());
  }
  CHECK_THROWS_AS(discrete_kl(CovKernel::gauss(), mesh, n + 1), Error);
  CHECK(discrete_kl(CovKernel::gauss(), mesh, 0).k() == 0);
}

TEST_CASE("KL modes localize on separated clusters") {
  const auto mesh = two_cluster_mesh();
  const auto b = discrete_kl(CovKernel::gauss(), mesh, 4);
  for (int m = 0; m < 4; ++m) {
    double left = 0.0, right = 0.0;
    for (int i = 0; i < mesh->num_vertices(); ++i) {
      const double e = mesh->lumped_mass()[i] * b.modes(i, m) * b.modes(i, m);
      (mesh->vertices()[i].x < 10 ? left : right) += e;
    }
    CHECK(std::min(left, right) / (left + right) <= 0.05);
  }
}

TEST_CASE("subspace iteration agrees with the dense solver") {
  const auto mesh = build_mesh(Domain::parse("unit_disk"), 0.05);
  REQUIRE(mesh->num_vertices() > kDenseKlLimit);
  const auto b = discrete_kl(CovKernel::gauss(), mesh, 10);
  // Reference: same problem on a dense solve, computed directly.
  const auto& v = mesh->vertices();
  const int n = mesh->num_vertices();
  const Eigen::VectorXd sw = mesh->lumped_mass().cwiseSqrt();
  Eigen::MatrixXd s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = sw[i] * std::exp(-sq_dist(v[i], v[j])) * sw[j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(s, Eigen::EigenvaluesOnly);
  for (int m = 0; m < 10; ++m) CHECK(b.eigenvalues[m] == doctest::Approx(ref.eigenvalues()[n - 1 - m]).epsilon(1e-9));
  const Eigen::MatrixXd gram = b.modes.transpose() * mesh->lumped_mass().asDiagonal() * b.modes;
  CHECK((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("sampling statistics") {
  const auto mesh = build_mesh(Domain::parse("plate_holes"), 0.35);
  const double area = mesh->total_area();
  const auto kernel = CovKernel::scaled_gauss(area);
  const int n = mesh->num_vertices();
  const auto b = discrete_kl(kernel, mesh, n);
  const int samples = 2000;
  Eigen::MatrixXd f(n, samples);
  for (int s = 0; s < samples; ++s) f.col(s) = sample_field(b, static_cast<std::uint64_t>(s)).coeffs;
  const Eigen::VectorXd mean = f.rowwise().mean();
  for (int i = 0; i < n; ++i) CHECK(std::abs(mean[i]) <= 4 * std::sqrt(kernel(mesh->vertices()[i], mesh->vertices()[i]) / samples));
  const Eigen::MatrixXd centered = f.colwise() - mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / (samples - 1);
  const Eigen::MatrixXd truncated = b.modes * b.eigenvalues.asDiagonal() * b.modes.transpose();
  CHECK((cov - truncated).norm() / truncated.norm() <= 0.15);
  for (int i = 0; i < n; ++i) CHECK(std::abs(cov(i, i) * area - 1.0) <= 0.25);

  CHECK(sample_field(b, 9).coeffs == sample_field(b, 9).coeffs);
  CHECK(sample_field(b, 9).coeffs != sample_field(b, 10).coeffs);
  const auto empty = discrete_kl(kernel, mesh, 0);
  CHECK(sample_field(empty, 3).coeffs.isZero());
}

TEST_CASE("expansion is linear in the coefficients") {
  const auto mesh = build_mesh(Domain::parse("disk_square_hole"), 0.3);
  const auto b = discrete_kl(CovKernel::cauchy(), mesh, 20);
  Eigen::VectorXd xi = Eigen::VectorXd::LinSpaced(20, -1.0, 2.0);
  CHECK((expand_field(b, 2 * xi) - 2 * expand_field(b, xi)).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK_THROWS_AS(expand_field(b, Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("square push-forward") {
  const auto mesh = build_mesh(Domain::parse("disk_square_hole"), 0.3);
  const FeFunction c(mesh, Eigen::VectorXd::Constant(mesh->num_vertices(), -2.0));
  CHECK((square_pushforward(c).coeffs.array() == 4.0).all());
  const auto b = discrete_kl(CovKernel::cauchy(), mesh, 20);
  const auto f = sample_field(b, 4);
  const auto g = square_pushforward(f);
  CHECK((g.coeffs.array() >= 0).all());
  for (int i = 0; i < mesh->num_vertices(); ++i) CHECK(g.coeffs[i] == f.coeffs[i] * f.coeffs[i]);
}

TEST_CASE("KL cache round trip") {
  const auto mesh = build_mesh(Domain::parse("unit_disk"), 0.3);
  const auto b = discrete_kl(CovKernel::cauchy(), mesh, 7);
  const auto path = std::filesystem::temp_directory_path() / "minn_test_kl.bin";
  save_kl(b, path);
  const auto r = load_kl(path, mesh);
  CHECK(r.kernel.kind == KernelKind::Cauchy);
  CHECK(r.kernel.scale == b.kernel.scale);
  CHECK(r.eigenvalues == b.eigenvalues);
  CHECK(r.modes == b.modes);
  const auto other = build_mesh(Domain::parse("unit_disk"), 0.5);
  CHECK_THROWS_AS(load_kl(path, other), Error);
  std::filesystem::resize_file(path, 40);
  CHECK_THROWS_AS(load_kl(path, mesh), Error);
  std::filesystem::remove(path);
}

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "minn/error.hpp"
#include "minn/mesh.hpp"
#include "test_helpers.hpp"

using namespace minn;

namespace {

MeshPtr single_triangle(Point a, Point b, Point c) {
  return std::make_shared<const Mesh>(Domain::parse("rect(-10,-10,10,10)"), std::vector<Point>{a, b, c},
                                      std::vector<Triangle>{{0, 1, 2}});
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("minn_test_" + name);
}

}  // namespace

TEST_CASE("domain descriptors and presets") {
  const auto a = Domain::parse("crescent");
  CHECK(a.contains({0.5, 0.0}));
  CHECK_FALSE(a.contains({-0.75, 0.0}));
  CHECK(a.contains({1.0, 0.0}));  // closed
  const auto again = Domain::parse(a.descriptor());
  CHECK(again.descriptor() == a.descriptor());

  const auto b = Domain::parse("plate_holes");
  CHECK_FALSE(b.contains({0.0, 1.0}));
  CHECK(b.contains({0.0, 0.0}));
  const auto d = Domain::parse("disk_square_hole");
  CHECK_FALSE(d.contains({0.1, 0.1}));
  CHECK(d.contains({0.7, 0.0}));

  CHECK_THROWS_AS(Domain::parse("disk(0,0)"), Error);
  CHECK_THROWS_AS(Domain::parse("blob(1)"), Error);
  CHECK_THROWS_AS(Domain::parse("disk(0,0,1) extra"), Error);
}

TEST_CASE("boundary samples lie on the boundary") {
  const auto a = Domain::parse("crescent");
  const auto pts = a.sample_boundary(0.01);
  REQUIRE(pts.size() > 100);
  for (const auto& p : pts) CHECK(std::abs(a.signed_distance(p)) < 1e-12);
  // Samples from the removed disk sit inside the unit disk only.
  for (const auto& p : pts) CHECK(norm(p) <= 1.0 + 1e-12);
}

TEST_CASE("build_mesh on the unit square at pitch 0.5") {
  const auto mesh = build_mesh(Domain::parse("rect(0,0,1,1)"), 0.5 * std::sqrt(2.0));
  CHECK(mesh->num_vertices() == 9);
  CHECK(mesh->num_triangles() == 8);
  CHECK(mesh->h() == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));
  CHECK(mesh->h_min() == doctest::Approx(mesh->h()).epsilon(1e-14));
  CHECK(mesh->total_area() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("build_mesh errors") {
  CHECK_THROWS_AS(build_mesh(Domain::parse("unit_disk"), 0.0), Error);
  try {
    build_mesh(Domain::parse("unit_disk"), -1.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidStep);
  }
  try {
    build_mesh(Domain::parse("disk(0,0,0.1)"), 5.0);
    FAIL("expected EmptyMesh");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyMesh);
  }
}

TEST_CASE("disk mesh vertices are inside the closed disk") {
  const auto mesh = build_mesh(Domain::parse("unit_disk"), 0.1);
  for (const auto& p : mesh->vertices()) CHECK(norm(p) <= 1.0 + 1e-9);
  const auto m = mesh_metrics(*mesh);
  CHECK(std::abs(m.h - mesh->h()) <= 1e-12);
  CHECK(std::abs(m.h_min - mesh->h_min()) <= 1e-12);
  CHECK(std::abs(m.sigma - mesh->sigma()) <= 1e-12);
}

TEST_CASE("mesh_metrics analytic triangles") {
  const auto right = single_triangle({0, 0}, {1, 0}, {0, 1});
  CHECK(right->h() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  // Inscribed diameter of the unit right triangle: 2 r, r = (1 + 1 - sqrt 2) / 2.
  const double inscribed = 2.0 - std::sqrt(2.0);
  CHECK(right->sigma() == doctest::Approx(std::sqrt(2.0) / inscribed).epsilon(1e-13));
  CHECK(right->sigma() == doctest::Approx(2.414213562373095).epsilon(1e-12));

  const auto eq = single_triangle({0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2});
  CHECK(eq->h() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(eq->sigma() == doctest::Approx(std::sqrt(3.0)).epsilon(1e-13));
}

TEST_CASE("degenerate and inverted elements") {
  CHECK_THROWS_AS(single_triangle({0, 0}, {1, 0}, {2, 0}), Error);
  const auto inv = single_triangle({0, 0}, {0, 1}, {1, 0});
  CHECK(inv->areas()[0] == doctest::Approx(0.5));
}

TEST_CASE("mass matrix element block and partition of unity") {
  const auto tri = single_triangle({0, 0}, {2, 0}, {0, 1});
  const double area = 1.0;
  const Eigen::MatrixXd m = Eigen::MatrixXd(tri->mass());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(m(i, j) == doctest::Approx((i == j ? 2.0 : 1.0) * area / 12.0));

  const auto mesh = build_mesh(Domain::parse("crescent"), 0.15);
  const Eigen::MatrixXd full = Eigen::MatrixXd(mesh->mass());
  CHECK(full.sum() == doctest::Approx(mesh->total_area()).epsilon(1e-12));
  CHECK((full - full.transpose()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(mesh->num_vertices() <= 500);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(full);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);

  const double c = 1.7;
  const Eigen::VectorXd cvec = Eigen::VectorXd::Constant(mesh->num_vertices(), c);
  CHECK(cvec.dot(mesh->mass() * cvec) == doctest::Approx(mesh->total_area() * c * c).epsilon(1e-12));
}

TEST_CASE("l2_norm examples") {
  const auto sq = build_mesh(Domain::parse("rect(0,0,1,1)"), 0.1);
  Eigen::VectorXd x1(sq->num_vertices());
  for (int i = 0; i < sq->num_vertices(); ++i) x1[i] = sq->vertices()[i].x;
  CHECK(std::abs(l2_norm(FeFunction(sq, x1)) - std::sqrt(1.0 / 3.0)) <= 1e-12);
  CHECK(l2_norm(FeFunction(sq, Eigen::VectorXd::Zero(sq->num_vertices()))) == 0.0);
  CHECK(l2_norm(FeFunction(sq, Eigen::VectorXd::Constant(sq->num_vertices(), 3.0))) ==
        doctest::Approx(3.0 * std::sqrt(sq->total_area())).epsilon(1e-12));
  // Positive on any nonzero vector.
  std::mt19937 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(sq->num_vertices());
    v[trial * 3] = g(rng);
    CHECK(l2_norm(*sq, v) > 0.0);
  }
}

TEST_CASE("p1_gradient reproduces affine functions") {
  const auto mesh = build_mesh(Domain::parse("disk_square_hole"), 0.1);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 5; ++trial) {
    const double a = u(rng), b = u(rng), c = u(rng);
    Eigen::VectorXd f(mesh->num_vertices());
    for (int i = 0; i < mesh->num_vertices(); ++i)
      f[i] = a * mesh->vertices()[i].x + b * mesh->vertices()[i].y + c;
    for (const auto& g : p1_gradient(FeFunction(mesh, f))) {
      CHECK(std::abs(g.x - a) <= 1e-12);
      CHECK(std::abs(g.y - b) <= 1e-12);
    }
  }
  Eigen::VectorXd f(mesh->num_vertices());
  for (int i = 0; i < mesh->num_vertices(); ++i) f[i] = 3 * mesh->vertices()[i].x - 2 * mesh->vertices()[i].y;
  const auto g = p1_gradient(FeFunction(mesh, f));
  CHECK(std::abs(g.front().x - 3.0) <= 1e-12);
  CHECK(std::abs(g.front().y + 2.0) <= 1e-12);
}

TEST_CASE("exhaustiveness audit on the crescent domain") {
  const auto domain = Domain::parse("crescent");
  const auto mesh = build_mesh(domain, 0.1);
  double worst = 0.0;
  for (const auto& p : minn::testing::sample_domain(domain, 10000, 42))
    worst = std::max(worst, minn::testing::distance_to_mesh(*mesh, p));
  MESSAGE("worst distance " << worst << " h " << mesh->h() << " nodes " << mesh->num_vertices());
  CHECK(worst <= mesh->h());
}

TEST_CASE("mesh file round trip and errors") {
  const auto mesh = build_mesh(Domain::parse("crescent"), 0.2);
  const auto path = temp_file("mesh.txt");
  save_mesh(*mesh, path);
  const auto back = load_mesh(path);
  REQUIRE(back->num_vertices() == mesh->num_vertices());
  for (int i = 0; i < mesh->num_vertices(); ++i) CHECK(back->vertices()[i] == mesh->vertices()[i]);
  CHECK(back->triangles() == mesh->triangles());
  CHECK(back->domain().descriptor() == mesh->domain().descriptor());

  {
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(temp_file("trunc.txt"));
    out << all.substr(0, all.size() / 2);
  }
  try {
    load_mesh(temp_file("trunc.txt"));
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
  }

  {
    std::ofstream out(temp_file("inverted.txt"));
    out << "MESH2D 3 1\n0 0\n1 0\n0 1\n0 2 1\nDOMAIN unit_disk\n";
  }
  const auto inv = load_mesh(temp_file("inverted.txt"));
  CHECK(inv->areas()[0] > 0.0);

  {
    std::ofstream out(temp_file("degenerate.txt"));
    out << "MESH2D 3 1\n0 0\n1 0\n2 0\n0 1 2\nDOMAIN unit_disk\n";
  }
  try {
    load_mesh(temp_file("degenerate.txt"));
    FAIL("expected InvariantViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvariantViolation);
  }
}

TEST_CASE("built meshes do not overlap and cover the presets") {
  const double pi = 3.14159265358979323846;
  const std::pair<const char*, double> presets[] = {
      {"plate_holes", 12.0 - 2 * 1.5}, {"unit_disk", pi}, {"disk_square_hole", pi - 0.64}};
  for (const auto& [name, exact_area] : presets) {
    const auto domain = Domain::parse(name);
    const auto mesh = build_mesh(domain, 0.08);
    CHECK(mesh->total_area() <= exact_area * (1 + 1e-9));
    CHECK(mesh->total_area() >= exact_area * 0.97);
    const auto& v = mesh->vertices();
    for (const auto& p : minn::testing::sample_domain(domain, 2000, 3)) {
      int hits = 0;
      for (const auto& t : mesh->triangles()) {
        const double d1 = cross(v[t[1]] - v[t[0]], p - v[t[0]]);
        const double d2 = cross(v[t[2]] - v[t[1]], p - v[t[1]]);
        const double d3 = cross(v[t[0]] - v[t[2]], p - v[t[2]]);
        if (d1 > 1e-12 && d2 > 1e-12 && d3 > 1e-12) ++hits;
      }
      CHECK(hits <= 1);
    }
    for (const auto& p : v) CHECK(domain.signed_distance(p) <= 1e-9);
  }
}

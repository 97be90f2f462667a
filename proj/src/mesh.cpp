#include "minn/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "minn/error.hpp"

namespace minn {

namespace {

struct ElementShape {
  double area;
  double diameter;
  double inscribed_diameter;
};

ElementShape element_shape(Point a, Point b, Point c) {
  const double area = 0.5 * std::abs(twice_signed_area(a, b, c));
  const double la = dist(b, c);
  const double lb = dist(a, c);
  const double lc = dist(a, b);
  const double semi = 0.5 * (la + lb + lc);
  // Inscribed-ball diameter 2r with r = area / semiperimeter.
  return {area, std::max({la, lb, lc}), 2.0 * area / semi};
}

// Right isosceles grid triangles have h_K / R_K = 1 + sqrt(2).
constexpr double kMaxElementAspect = 8.0;

}  // namespace

FeFunction::FeFunction(MeshPtr m, Eigen::VectorXd c) : mesh(std::move(m)), coeffs(std::move(c)) {
  if (!mesh) throw Error(ErrorCode::InvalidDim, "FeFunction without mesh");
  if (coeffs.size() != mesh->num_vertices())
    throw Error(ErrorCode::DimMismatch, "FeFunction has " + std::to_string(coeffs.size()) +
                                            " coefficients for " +
                                            std::to_string(mesh->num_vertices()) + " vertices");
  if (!coeffs.allFinite()) throw Error(ErrorCode::InvariantViolation, "FeFunction has non-finite entries");
}

Mesh::Mesh(Domain domain, std::vector<Point> vertices, std::vector<Triangle> triangles)
    : domain_(std::move(domain)), vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  if (triangles_.empty()) throw Error(ErrorCode::EmptyMesh, "mesh has no triangles");
  const int n = num_vertices();
  for (const auto& p : vertices_)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw Error(ErrorCode::InvariantViolation, "non-finite vertex coordinate");

  std::set<std::array<int, 3>> seen;
  std::map<std::pair<int, int>, int> edge_use;
  for (std::size_t k = 0; k < triangles_.size(); ++k) {
    auto& t = triangles_[k];
    for (int v : t)
      if (v < 0 || v >= n)
        throw Error(ErrorCode::InvariantViolation, "triangle " + std::to_string(k) + " has vertex index out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw Error(ErrorCode::DegenerateElement, "triangle " + std::to_string(k) + " repeats a vertex");
    const double a2 = twice_signed_area(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
    if (a2 == 0.0) throw Error(ErrorCode::DegenerateElement, "triangle " + std::to_string(k) + " has zero area");
    if (a2 < 0.0) std::swap(t[1], t[2]);

    auto key = t;
    std::sort(key.begin(), key.end());
    if (!seen.insert(key).second)
      throw Error(ErrorCode::InvariantViolation, "triangle " + std::to_string(k) + " is duplicated");
    for (int e = 0; e < 3; ++e) {
      int i = t[e], j = t[(e + 1) % 3];
      if (i > j) std::swap(i, j);
      if (++edge_use[{i, j}] > 2)
        throw Error(ErrorCode::InvariantViolation, "edge shared by more than two triangles");
    }
  }

  metrics_ = mesh_metrics(*this);
  areas_.resize(triangles_.size());
  for (std::size_t k = 0; k < triangles_.size(); ++k) {
    const auto& t = triangles_[k];
    areas_[k] = 0.5 * twice_signed_area(vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]);
    total_area_ += areas_[k];
  }
  mass_ = assemble_mass_matrix(*this);
  lumped_ = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < triangles_.size(); ++k)
    for (int v : triangles_[k]) lumped_[v] += areas_[k] / 3.0;
}

std::vector<std::array<int, 2>> Mesh::boundary_edges() const {
  std::map<std::pair<int, int>, int> use;
  for (const auto& t : triangles_)
    for (int e = 0; e < 3; ++e) {
      int i = t[e], j = t[(e + 1) % 3];
      if (i > j) std::swap(i, j);
      ++use[{i, j}];
    }
  std::vector<std::array<int, 2>> out;
  for (const auto& [edge, count] : use)
    if (count == 1) out.push_back({edge.first, edge.second});
  return out;
}

MeshPtr build_mesh(const Domain& domain, double target_h) {
  if (!(target_h > 0.0) || !std::isfinite(target_h))
    throw Error(ErrorCode::InvalidStep, "target_h must be positive, got " + std::to_string(target_h));
  const double pitch = target_h / std::sqrt(2.0);
  const auto box = domain.bounds();
  const double slack = 1e-9;
  // One extra column/row so the grid reaches past the far side of the box.
  const int nx = std::max(1, static_cast<int>(std::ceil((box.hi.x - box.lo.x) / pitch - slack)));
  const int ny = std::max(1, static_cast<int>(std::ceil((box.hi.y - box.lo.y) / pitch - slack)));
  const double tol = slack * pitch;

  const auto grid_index = [&](int i, int j) { return static_cast<long>(j) * (nx + 1) + i; };
  std::vector<Point> grid(static_cast<std::size_t>(nx + 1) * (ny + 1));
  std::vector<char> inside(grid.size());
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const long g = grid_index(i, j);
      grid[g] = {box.lo.x + pitch * i, box.lo.y + pitch * j};
      inside[g] = domain.contains(grid[g], tol);
    }

  // Candidates: grid triangles touching the closed domain.
  std::vector<std::array<long, 3>> candidates;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const std::array<std::array<long, 3>, 2> halves{{
          {grid_index(i, j), grid_index(i + 1, j), grid_index(i + 1, j + 1)},
          {grid_index(i, j), grid_index(i + 1, j + 1), grid_index(i, j + 1)},
      }};
      for (const auto& t : halves) {
        if (inside[t[0]] || inside[t[1]] || inside[t[2]]) candidates.push_back(t);
      }
    }

  // Vertices of kept triangles that fall outside are pulled onto the boundary.
  std::vector<Point> moved = grid;
  std::vector<char> touched(grid.size(), 0);
  for (const auto& t : candidates)
    for (long g : t)
      if (!inside[g] && !touched[g]) {
        moved[g] = domain.project_to_boundary(grid[g]);
        touched[g] = 1;
      }

  // Keep projected elements that are neither flipped nor slivers and whose
  // centroid stays in the domain.
  std::vector<std::array<long, 3>> kept;
  for (const auto& t : candidates) {
    if (twice_signed_area(moved[t[0]], moved[t[1]], moved[t[2]]) <= 0.0) continue;
    const auto shape = element_shape(moved[t[0]], moved[t[1]], moved[t[2]]);
    if (shape.diameter > kMaxElementAspect * shape.inscribed_diameter) continue;
    const Point c = (1.0 / 3.0) * (moved[t[0]] + moved[t[1]] + moved[t[2]]);
    if (!domain.contains(c, tol)) continue;
    kept.push_back(t);
  }
  if (kept.empty())
    throw Error(ErrorCode::EmptyMesh, "no triangle of pitch " + std::to_string(pitch) + " fits in " +
                                          domain.descriptor());

  std::vector<long> remap(grid.size(), -1);
  for (const auto& t : kept)
    for (long g : t) remap[g] = 0;
  std::vector<Point> vertices;
  for (std::size_t g = 0; g < grid.size(); ++g)
    if (remap[g] == 0) {
      remap[g] = static_cast<long>(vertices.size());
      vertices.push_back(moved[g]);
    }
  std::vector<Triangle> triangles;
  triangles.reserve(kept.size());
  for (const auto& t : kept)
    triangles.push_back({static_cast<int>(remap[t[0]]), static_cast<int>(remap[t[1]]),
                         static_cast<int>(remap[t[2]])});
  return std::make_shared<const Mesh>(domain, std::move(vertices), std::move(triangles));
}

MeshMetrics mesh_metrics(const Mesh& mesh) {
  MeshMetrics m;
  m.h_min = std::numeric_limits<double>::infinity();
  const auto& v = mesh.vertices();
  for (const auto& t : mesh.triangles()) {
    const auto s = element_shape(v[t[0]], v[t[1]], v[t[2]]);
    if (s.area == 0.0) throw Error(ErrorCode::DegenerateElement, "zero-area triangle");
    m.h = std::max(m.h, s.diameter);
    m.h_min = std::min(m.h_min, s.diameter);
    m.sigma = std::max(m.sigma, s.diameter / s.inscribed_diameter);
  }
  return m;
}

std::array<Point, 3> barycentric_gradients(Point a, Point b, Point c) {
  const double a2 = twice_signed_area(a, b, c);
  if (a2 == 0.0) throw Error(ErrorCode::DegenerateElement, "zero-area triangle");
  return {Point{(b.y - c.y) / a2, (c.x - b.x) / a2}, Point{(c.y - a.y) / a2, (a.x - c.x) / a2},
          Point{(a.y - b.y) / a2, (b.x - a.x) / a2}};
}

SparseMatrix assemble_mass_matrix(const Mesh& mesh) {
  const auto& v = mesh.vertices();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.triangles().size() * 9);
  for (const auto& t : mesh.triangles()) {
    const double area = 0.5 * twice_signed_area(v[t[0]], v[t[1]], v[t[2]]);
    if (area == 0.0) throw Error(ErrorCode::DegenerateElement, "zero-area triangle");
    const double a = std::abs(area);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(t[i], t[j], (i == j ? 2.0 : 1.0) * a / 12.0);
  }
  SparseMatrix m(mesh.num_vertices(), mesh.num_vertices());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

SparseMatrix assemble_stiffness_matrix(const Mesh& mesh) {
  const auto& v = mesh.vertices();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.triangles().size() * 9);
  for (std::size_t k = 0; k < mesh.triangles().size(); ++k) {
    const auto& t = mesh.triangles()[k];
    const auto g = barycentric_gradients(v[t[0]], v[t[1]], v[t[2]]);
    const double area = mesh.areas()[k];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(t[i], t[j], area * dot(g[i], g[j]));
  }
  SparseMatrix m(mesh.num_vertices(), mesh.num_vertices());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

double l2_norm(const Mesh& mesh, const Eigen::VectorXd& coeffs) {
  if (coeffs.size() != mesh.num_vertices()) throw Error(ErrorCode::DimMismatch, "l2_norm: size mismatch");
  const double q = coeffs.dot(mesh.mass() * coeffs);
  return std::sqrt(std::max(q, 0.0));
}

double l2_norm(const FeFunction& f) { return l2_norm(*f.mesh, f.coeffs); }

std::vector<Point> p1_gradient(const FeFunction& f) {
  const auto& v = f.mesh->vertices();
  std::vector<Point> out;
  out.reserve(f.mesh->triangles().size());
  for (const auto& t : f.mesh->triangles()) {
    const auto g = barycentric_gradients(v[t[0]], v[t[1]], v[t[2]]);
    Point s{0, 0};
    for (int i = 0; i < 3; ++i) s = s + f.coeffs[t[i]] * g[i];
    out.push_back(s);
  }
  return out;
}

double bounding_diameter(const Mesh& mesh) {
  Point lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Point hi{-lo.x, -lo.y};
  for (const auto& p : mesh.vertices()) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  return dist(lo, hi);
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  char buf[96];
  out << "MESH2D " << mesh.num_vertices() << ' ' << mesh.num_triangles() << '\n';
  for (const auto& p : mesh.vertices()) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
    out << buf;
  }
  for (const auto& t : mesh.triangles()) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  out << "DOMAIN " << mesh.domain().descriptor() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

MeshPtr load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  long lineno = 0;
  auto next_line = [&](const char* what) -> std::istringstream {
    if (!std::getline(in, line))
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno + 1) +
                                             ": unexpected end of file, expected " + what);
    ++lineno;
    return std::istringstream(line);
  };
  auto fail = [&](const std::string& msg) -> Error {
    return Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };

  auto header = next_line("header");
  std::string tag;
  long nv = -1, nt = -1;
  if (!(header >> tag >> nv >> nt) || tag != "MESH2D" || nv < 0 || nt < 0)
    throw fail("expected 'MESH2D <N_vertices> <N_triangles>'");

  std::vector<Point> vertices(static_cast<std::size_t>(nv));
  for (auto& p : vertices) {
    auto ls = next_line("vertex");
    if (!(ls >> p.x >> p.y)) throw fail("expected 'x y'");
  }
  std::vector<Triangle> triangles(static_cast<std::size_t>(nt));
  for (auto& t : triangles) {
    auto ls = next_line("triangle");
    if (!(ls >> t[0] >> t[1] >> t[2])) throw fail("expected 'i j k'");
  }
  auto dl = next_line("DOMAIN line");
  if (!(dl >> tag) || tag != "DOMAIN") throw fail("expected 'DOMAIN <descriptor>'");
  std::string desc;
  std::getline(dl, desc);
  Domain domain = [&] {
    try {
      return Domain::parse(desc);
    } catch (const Error& e) {
      throw fail(e.what());
    }
  }();
  try {
    return std::make_shared<const Mesh>(std::move(domain), std::move(vertices), std::move(triangles));
  } catch (const Error& e) {
    throw Error(ErrorCode::InvariantViolation, path.string() + ": " + e.what());
  }
}

}  // namespace minn

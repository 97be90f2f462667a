#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "minn/domain.hpp"
#include "minn/geometry.hpp"

namespace minn {

using Triangle = std::array<int, 3>;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct MeshMetrics {
  double h = 0.0;      // max element diameter
  double h_min = 0.0;  // min element diameter
  double sigma = 0.0;  // max over elements of h_K / R_K
};

/// Conforming 2-D simplicial mesh with P1 machinery.
///
/// Immutable after construction. Triangles are stored counter-clockwise;
/// the constructor flips clockwise input and rejects zero-area elements.
/// The consistent and lumped mass matrices are assembled once here since
/// every norm evaluation needs them.
class Mesh {
 public:
  Mesh(Domain domain, std::vector<Point> vertices, std::vector<Triangle> triangles);

  const Domain& domain() const { return domain_; }
  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }

  double h() const { return metrics_.h; }
  double h_min() const { return metrics_.h_min; }
  double sigma() const { return metrics_.sigma; }
  const MeshMetrics& metrics() const { return metrics_; }

  const std::vector<double>& areas() const { return areas_; }
  double total_area() const { return total_area_; }
  const SparseMatrix& mass() const { return mass_; }
  const Eigen::VectorXd& lumped_mass() const { return lumped_; }

  /// Edges that belong to exactly one triangle, as vertex pairs.
  std::vector<std::array<int, 2>> boundary_edges() const;

 private:
  Domain domain_;
  std::vector<Point> vertices_;
  std::vector<Triangle> triangles_;
  MeshMetrics metrics_;
  std::vector<double> areas_;
  double total_area_ = 0.0;
  SparseMatrix mass_;
  Eigen::VectorXd lumped_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// P1 finite-element function identified with its vertex values.
struct FeFunction {
  MeshPtr mesh;
  Eigen::VectorXd coeffs;

  FeFunction() = default;
  FeFunction(MeshPtr m, Eigen::VectorXd c);
};

/// Structured right-triangle grid over the domain's bounding box at pitch
/// target_h / sqrt(2). Grid triangles with a vertex in the closed domain
/// have their outside vertices projected onto the boundary; projected
/// elements are kept when their aspect ratio h_K / R_K stays below 8 and
/// their centroid lies in the domain.
MeshPtr build_mesh(const Domain& domain, double target_h);

/// Recomputes (h, h_min, sigma) from the geometry.
MeshMetrics mesh_metrics(const Mesh& mesh);

/// Consistent P1 mass matrix, element block (A/12)[[2,1,1],[1,2,1],[1,1,2]].
SparseMatrix assemble_mass_matrix(const Mesh& mesh);

/// P1 stiffness matrix, entries integral of grad(phi_i) . grad(phi_j).
SparseMatrix assemble_stiffness_matrix(const Mesh& mesh);

double l2_norm(const FeFunction& f);
double l2_norm(const Mesh& mesh, const Eigen::VectorXd& coeffs);

/// Constant gradient of the interpolant on each triangle.
std::vector<Point> p1_gradient(const FeFunction& f);

/// Twice the signed area of (a, b, c).
inline double twice_signed_area(Point a, Point b, Point c) { return cross(b - a, c - a); }

/// Per-vertex barycentric gradients of a counter-clockwise triangle.
std::array<Point, 3> barycentric_gradients(Point a, Point b, Point c);

/// Diagonal of the vertex bounding box; an upper bound on the vertex set diameter.
double bounding_diameter(const Mesh& mesh);

void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
MeshPtr load_mesh(const std::filesystem::path& path);

}  // namespace minn

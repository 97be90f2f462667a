#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "minn/mesh.hpp"

namespace minn {

struct VascularSegment {
  Point a, b;
  int site_i = -1, site_j = -1;  // generating Voronoi sites, -1 when built by hand
};

/// Union of segments inside the closed unit disk.
class VascularNetwork {
 public:
  /// Throws Error(InvariantViolation) for zero-length segments, endpoints
  /// outside the disk or an empty network.
  explicit VascularNetwork(std::vector<VascularSegment> segments);

  const std::vector<VascularSegment>& segments() const { return segments_; }
  double total_length() const { return total_length_; }

 private:
  std::vector<VascularSegment> segments_;
  double total_length_ = 0.0;
};

struct OxygenConfig {
  double alpha = 0.1;   // diffusion
  double beta = 0.01;   // Robin boundary coefficient
  double eps = 0.05;    // kernel width
  double u_star = 0.1;  // hypoxia threshold

  void validate() const;
};

/// Homogeneous Poisson process of intensity 10 lambda on the unit disk: the
/// count is Poisson(10 lambda count_area) and the points are uniform.
/// count_area defaults to the disk area.
std::vector<Point> sample_poisson_points(double lambda, std::uint64_t seed, double count_area = std::numbers::pi);

enum class VoronoiEdges { All, Bounded };

/// Voronoi edges of the sites clipped to the closed unit disk; `Bounded`
/// keeps only edges between two Voronoi vertices. Throws
/// Error(TooFewPoints) for fewer than two sites or no edge in the disk.
VascularNetwork voronoi_network(std::vector<Point> sites, VoronoiEdges edges = VoronoiEdges::All);

/// Minimum distance from p to the network.
double distance_to_network(const VascularNetwork& net, Point p);

/// Kernel (1/eps^2) max(eps - dist(x, net), 0).
double phi_value(const VascularNetwork& net, double eps, Point p);

/// Nodal values of the kernel.
FeFunction phi_lambda(const VascularNetwork& net, double eps, MeshPtr mesh);

/// Integrals of the kernel against P1 basis functions: load_i = int phi v_i
/// and weighted_mass_ij = int phi v_i v_j, by sub-element quadrature with
/// the kernel evaluated exactly.
struct SourceTerms {
  Eigen::VectorXd load;
  SparseMatrix weighted_mass;
};

SourceTerms assemble_source(const VascularNetwork& net, double eps, const Mesh& mesh);

/// Mesh edges treated as the circle |x| = 1: boundary edges with both
/// endpoints at |x| >= 1 - h.
std::vector<std::array<int, 2>> robin_edges(const Mesh& mesh);

struct OxygenSystem {
  SparseMatrix matrix;
  Eigen::VectorXd rhs;
};

/// alpha K + M + beta B + (1/|L|) M_phi and (1/|L|) load.
OxygenSystem assemble_oxygen(const SourceTerms& source, double total_length, const OxygenConfig& cfg, const Mesh& mesh);

/// Direct sparse solve. Throws Error(SingularSystem).
FeFunction solve_oxygen_system(const OxygenSystem& system, MeshPtr mesh);

FeFunction solve_oxygen(const VascularNetwork& net, const OxygenConfig& cfg, MeshPtr mesh);

/// Lumped-mass fraction of the domain where u < u_star.
double hypoxic_fraction(const FeFunction& u, double u_star);

/// Random network law: point count area factor and Voronoi edge selection.
struct NetworkLaw {
  double count_area = std::numbers::pi;
  VoronoiEdges edges = VoronoiEdges::All;
};

struct Replicate {
  double q = 0.0;
  int n_points = 0;
  double total_length = 0.0;
};

struct SweepRow {
  double lambda = 0.0;
  double mean_q = 0.0;
  double ci99_halfwidth = 0.0;  // 2.576 s / sqrt(n)
  std::vector<Replicate> samples;
};

/// n_per_lambda independent network -> solve -> Q draws per grid value. The
/// replicate seed depends only on (seed, lambda index, replicate index).
/// Throws Error(InvalidDim) for an empty grid or n < 2; replicate failures
/// are rethrown with their indices.
std::vector<SweepRow> mc_sweep(const std::vector<double>& lambda_grid, int n_per_lambda, const OxygenConfig& cfg,
                               MeshPtr mesh, std::uint64_t seed, int threads = 1, const NetworkLaw& law = {});

/// Seed of replicate `rep` at grid index `k`.
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t k, int rep);

/// `lambda,mean_q,ci99_halfwidth,n`
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
/// `lambda,rep,q,n_points,total_length`
void write_replicates_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct OracleRow {
  double eps = 0.0;
  double smoothed = 0.0;
  double exact = 0.0;
  double error = 0.0;
};

/// Smoothed integral int v phi over the plane (midpoint rule, pitch at most
/// eps / pitch_divisor) against the exact line integral (5-point
/// Gauss-Legendre per segment).
std::vector<OracleRow> segment_integral_oracle(const VascularNetwork& net, const std::function<double(Point)>& v,
                                               const std::vector<double>& eps_list, int pitch_divisor = 20);

/// `eps,smoothed,exact,error`
void write_oracle_csv(const std::vector<OracleRow>& rows, const std::filesystem::path& path);

}  // namespace minn

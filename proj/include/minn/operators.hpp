#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "minn/mesh.hpp"
#include "minn/randfield.hpp"
#include "minn/train.hpp"

namespace minn {

/// mu = (mu1, mu2, mu3) in [0,1] x [-1,1] x [1,2].
struct DistanceFamilyParams {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double mu3 = 1.0;

  /// Throws Error(InvalidDim) outside the parameter box.
  void validate() const;
};

/// u(x) = min over boundary samples y with y2 > mu1 of |y - diag(1, mu3) x|,
/// times exp(x1 mu2). `spacing` <= 0 selects h / 10.
/// Throws Error(EmptyBoundary).
FeFunction distance_family(const DistanceFamilyParams& mu, MeshPtr mesh, double spacing = 0.0);

/// sqrt(1 + |grad u|^2) per element, averaged to vertices with area weights.
FeFunction area_operator(const FeFunction& u);

/// Discrete maximal function: for each vertex, the largest lumped-mass
/// average of |f| over vertices within distance r, r on an equispaced grid
/// of `radii_count` values in [h, r_max].
///
/// The per-vertex distance ordering is built once and reused across inputs.
class MaximalOperator {
 public:
  MaximalOperator(MeshPtr mesh, int radii_count = 50, double r_max = 2.0);

  FeFunction operator()(const FeFunction& f) const;
  const std::vector<double>& radii() const { return radii_; }

 private:
  MeshPtr mesh_;
  std::vector<double> radii_;
  // For vertex i: order_[i*n ..] sorts all vertices by distance to i;
  // cut_[i*R + k] counts those within radii_[k].
  std::vector<int> order_;
  std::vector<int> cut_;
};

FeFunction hl_maximal(const FeFunction& f, int radii_count = 50, double r_max = 2.0);

struct PorousMediaConfig {
  double newton_tol = 1e-9;
  int max_newton = 30;
  int max_halvings = 8;
  double delta_reg = 1e-8;

  void validate() const;
};

struct NewtonReport {
  int iterations = 0;
  std::vector<double> residuals;  // residual norm before each step and at exit
};

/// Steady porous media problem -div(u^2 grad u) + u = f with natural
/// boundary conditions, solved by damped Newton from the lumped projection
/// of f. Throws Error(NewtonDiverged).
FeFunction porous_media_solve(const FeFunction& f, const PorousMediaConfig& cfg = {}, NewtonReport* report = nullptr);

/// Galerkin residual of the porous media problem at u. The diffusion
/// coefficient on each element is the exact element mean of u^2 (plus
/// delta_reg); mass and load use the consistent mass matrix.
Eigen::VectorXd porous_media_residual(const FeFunction& u, const FeFunction& f, double delta_reg = 1e-8);

/// Derivative of porous_media_residual with respect to the coefficients of u.
SparseMatrix porous_media_jacobian(const FeFunction& u, double delta_reg = 1e-8);

enum class OperatorId { DistFamily, Area, HlMax, Porous };

OperatorId parse_operator_id(const std::string& name);
const char* to_string(OperatorId id);

struct DatasetSpec {
  OperatorId op = OperatorId::DistFamily;
  int n_samples = 0;
  std::uint64_t seed = 0;
  int kl_modes = 0;               // <= 0 selects the operator default (100, or 20 for porous)
  double boundary_spacing = 0.0;  // dist_family; <= 0 selects h / 10
  int radii_count = 50;           // hl_max
  double r_max = 2.0;             // hl_max
  PorousMediaConfig porous;
};

/// Covariance used for the operator's random input field.
CovKernel default_kernel(OperatorId op, const Mesh& mesh);

/// Samples inputs from the operator's input law with per-sample seed
/// seed + index and evaluates the ground truth on `mesh`. Samples are
/// independent, so `threads` only changes wall time. Generator errors are
/// rethrown with the sample index.
Dataset make_dataset(const DatasetSpec& spec, MeshPtr mesh, int threads = 1);

/// Writes inputs.bin, targets.bin and meta into `dir`. Each .bin file holds
/// u64 rows, u64 cols, then row-major f64 values, one row per sample.
void write_dataset(const Dataset& data, const DatasetSpec& spec, const std::filesystem::path& dir,
                   const std::string& mesh_file);

struct DatasetMeta {
  std::string op;
  int n = 0;
  int input_dim = 0;
  int output_dim = 0;
  std::string mesh_file;
  std::uint64_t seed = 0;
  std::string kernel;
  double kernel_scale = 0.0;
  int kl_modes = 0;
};

DatasetMeta read_dataset_meta(const std::filesystem::path& dir);

/// Reads a dataset directory; the mesh must match the recorded output size.
Dataset read_dataset(const std::filesystem::path& dir, MeshPtr mesh);

}  // namespace minn

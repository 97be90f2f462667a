#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "minn/geometry.hpp"
#include "minn/mesh.hpp"

namespace minn {

/// Support of a mesh-informed weight matrix in CSR layout.
///
/// Row i is an output node x'_i, column j an input node x_j, and (i, j) is
/// present exactly when |x_j - x'_i| <= support_r. Column indices are
/// sorted within each row.
struct SparsityPattern {
  int rows = 0;
  int cols = 0;
  double support_r = 0.0;
  std::vector<int> row_ptr{0};
  std::vector<int> col_idx;

  std::size_t nnz() const { return col_idx.size(); }
  bool contains(int i, int j) const;
  /// Row-major sorted (i, j) list.
  std::vector<std::pair<int, int>> entries() const;

  friend bool operator==(const SparsityPattern&, const SparsityPattern&) = default;
};

/// D(i, j) = |inputs[j] - outputs[i]|^2, shape outputs.size() x inputs.size().
Eigen::MatrixXd pairwise_sq_distances(std::span<const Point> inputs, std::span<const Point> outputs);

/// Radius-thresholded pattern; compares squared distances against r^2 and
/// includes pairs at distance exactly r. Distances are materialized in row
/// blocks of at most 1e6 entries. r = +inf yields the full pattern.
SparsityPattern support_pattern(std::span<const Point> inputs, std::span<const Point> outputs, double r);

/// Explicit nonzero bound N_h * c(2,1) * (sigma' r / h'_min)^2 with c(2,1) = 3,
/// where primes refer to the output mesh.
double nonzero_bound(const Mesh& mesh_in, const Mesh& mesh_out, double r);

void save_pattern(const SparsityPattern& pattern, const std::filesystem::path& path);
SparsityPattern load_pattern(const std::filesystem::path& path);

}  // namespace minn

#include "minn/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "minn/error.hpp"

namespace minn {

namespace {
constexpr std::size_t kDistanceBlockEntries = 1'000'000;
}

bool SparsityPattern::contains(int i, int j) const {
  if (i < 0 || i >= rows) return false;
  const auto first = col_idx.begin() + row_ptr[i];
  const auto last = col_idx.begin() + row_ptr[i + 1];
  return std::binary_search(first, last, j);
}

std::vector<std::pair<int, int>> SparsityPattern::entries() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(nnz());
  for (int i = 0; i < rows; ++i)
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) out.emplace_back(i, col_idx[k]);
  return out;
}

Eigen::MatrixXd pairwise_sq_distances(std::span<const Point> inputs, std::span<const Point> outputs) {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(outputs.size()), static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t j = 0; j < inputs.size(); ++j)
    for (std::size_t i = 0; i < outputs.size(); ++i)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sq_dist(inputs[j], outputs[i]);
  return d;
}

SparsityPattern support_pattern(std::span<const Point> inputs, std::span<const Point> outputs, double r) {
  if (!(r > 0.0)) throw Error(ErrorCode::InvalidStep, "support radius must be positive");
  SparsityPattern p;
  p.rows = static_cast<int>(outputs.size());
  p.cols = static_cast<int>(inputs.size());
  p.support_r = r;
  p.row_ptr.assign(1, 0);
  p.row_ptr.reserve(outputs.size() + 1);
  const double r2 = r * r;

  const std::size_t cols = std::max<std::size_t>(1, inputs.size());
  const std::size_t block_rows = std::max<std::size_t>(1, kDistanceBlockEntries / cols);
  for (std::size_t start = 0; start < outputs.size(); start += block_rows) {
    const std::size_t count = std::min(block_rows, outputs.size() - start);
    const Eigen::MatrixXd d = pairwise_sq_distances(inputs, outputs.subspan(start, count));
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < inputs.size(); ++j)
        if (d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= r2)
          p.col_idx.push_back(static_cast<int>(j));
      p.row_ptr.push_back(static_cast<int>(p.col_idx.size()));
    }
  }
  if (p.nnz() == 0 && !outputs.empty() && !inputs.empty())
    std::clog << "warning: EmptyPattern: no node pair within r = " << r << '\n';
  return p;
}

double nonzero_bound(const Mesh& mesh_in, const Mesh& mesh_out, double r) {
  const double dofs_per_element = 3.0;  // (d + q')! / (q'! d!) for d = 2, q' = 1
  const double ratio = mesh_out.sigma() * r / mesh_out.h_min();
  return static_cast<double>(mesh_in.num_vertices()) * dofs_per_element * ratio * ratio;
}

void save_pattern(const SparsityPattern& pattern, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", pattern.support_r);
  out << "PATTERN " << pattern.rows << ' ' << pattern.cols << ' ' << buf << '\n';
  for (const auto& [i, j] : pattern.entries()) out << i << ' ' << j << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

SparsityPattern load_pattern(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  long lineno = 1;
  auto fail = [&](const std::string& msg) {
    return Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + msg);
  };
  if (!std::getline(in, line)) throw fail("missing PATTERN header");
  std::istringstream hs(line);
  std::string tag, rtext;
  SparsityPattern p;
  if (!(hs >> tag >> p.rows >> p.cols >> rtext) || tag != "PATTERN" || p.rows < 0 || p.cols < 0)
    throw fail("expected 'PATTERN <rows> <cols> <r>'");
  p.support_r = std::strtod(rtext.c_str(), nullptr);
  p.row_ptr.assign(static_cast<std::size_t>(p.rows) + 1, 0);
  int prev_i = 0, prev_j = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int i = 0, j = 0;
    if (!(ls >> i >> j)) throw fail("expected 'i j'");
    if (i < 0 || i >= p.rows || j < 0 || j >= p.cols) throw fail("index out of range");
    if (i < prev_i || (i == prev_i && j <= prev_j)) throw fail("entries not sorted row-major");
    prev_i = i;
    prev_j = j;
    ++p.row_ptr[static_cast<std::size_t>(i) + 1];
    p.col_idx.push_back(j);
  }
  for (int i = 0; i < p.rows; ++i) p.row_ptr[i + 1] += p.row_ptr[i];
  return p;
}

}  // namespace minn

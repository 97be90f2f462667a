#include "minn/vascular.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <random>
#include <thread>

#include <Eigen/SparseCholesky>

#include "minn/error.hpp"

namespace minn {

namespace {

// Uniform bucket grid over segment bounding boxes for distance queries.
class SegmentIndex {
 public:
  SegmentIndex(const std::vector<VascularSegment>& segs, double cell) : segs_(segs), cell_(cell) {
    lo_ = {INFINITY, INFINITY};
    Point hi{-INFINITY, -INFINITY};
    for (const auto& s : segs) {
      lo_ = {std::min({lo_.x, s.a.x, s.b.x}), std::min({lo_.y, s.a.y, s.b.y})};
      hi = {std::max({hi.x, s.a.x, s.b.x}), std::max({hi.y, s.a.y, s.b.y})};
    }
    nx_ = std::max(1, static_cast<int>(std::ceil((hi.x - lo_.x) / cell_)) + 1);
    ny_ = std::max(1, static_cast<int>(std::ceil((hi.y - lo_.y) / cell_)) + 1);
    buckets_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (int k = 0; k < static_cast<int>(segs.size()); ++k) {
      const auto& s = segs[k];
      const int x0 = cx(std::min(s.a.x, s.b.x)), x1 = cx(std::max(s.a.x, s.b.x));
      const int y0 = cy(std::min(s.a.y, s.b.y)), y1 = cy(std::max(s.a.y, s.b.y));
      for (int j = y0; j <= y1; ++j)
        for (int i = x0; i <= x1; ++i) buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(k);
    }
  }

  /// Distance to the nearest segment if it is below `cutoff`, else INFINITY.
  double distance(Point p, double cutoff) const {
    const int i0 = cx(p.x - cutoff), i1 = cx(p.x + cutoff);
    const int j0 = cy(p.y - cutoff), j1 = cy(p.y + cutoff);
    double best = INFINITY;
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        for (int k : buckets_[static_cast<std::size_t>(j) * nx_ + i])
          best = std::min(best, point_segment_distance(p, segs_[k].a, segs_[k].b));
    return best < cutoff ? best : INFINITY;
  }

 private:
  int cx(double x) const { return std::clamp(static_cast<int>(std::floor((x - lo_.x) / cell_)), 0, nx_ - 1); }
  int cy(double y) const { return std::clamp(static_cast<int>(std::floor((y - lo_.y) / cell_)), 0, ny_ - 1); }

  const std::vector<VascularSegment>& segs_;
  double cell_;
  Point lo_;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

double kernel(double d, double eps) { return d < eps ? (eps - d) / (eps * eps) : 0.0; }

// Convex polygon; label[k] names the site whose bisector produced edge
// (v[k], v[k+1]), -1 for the bounding box.
struct Cell {
  std::vector<Point> v;
  std::vector<int> label;
};

void clip(Cell& cell, Point mid, Point normal, int site) {
  Cell out;
  const std::size_t n = cell.v.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Point a = cell.v[k], b = cell.v[(k + 1) % n];
    const double da = dot(a - mid, normal), db = dot(b - mid, normal);
    const bool ain = da <= 0, bin = db <= 0;
    if (ain) {
      out.v.push_back(a);
      out.label.push_back(cell.label[k]);
    }
    if (ain != bin) {
      const Point x = a + (da / (da - db)) * (b - a);
      out.v.push_back(x);
      out.label.push_back(ain ? site : cell.label[k]);
    }
  }
  cell = std::move(out);
}

// Portion of segment pq inside the closed unit disk.
bool clip_to_disk(Point& p, Point& q) {
  const Point d = q - p;
  const double a = dot(d, d), b = 2 * dot(p, d), c = dot(p, p) - 1.0;
  if (a == 0) return false;
  const double disc = b * b - 4 * a * c;
  if (disc <= 0) return false;
  const double s = std::sqrt(disc);
  const double t0 = std::max(0.0, (-b - s) / (2 * a)), t1 = std::min(1.0, (-b + s) / (2 * a));
  if (t1 <= t0) return false;
  Point np = p + t0 * d, nq = p + t1 * d;
  for (Point* x : {&np, &nq}) {
    const double r = norm(*x);
    if (r > 1.0) *x = (1.0 / r) * *x;
  }
  p = np;
  q = nq;
  return true;
}

struct QuadPoint {
  double l0, l1, l2, w;
};

// Interior three-point rule on each of the m^2 sub-triangles.
std::vector<QuadPoint> subdivided_rule(int m) {
  std::vector<QuadPoint> rule;
  const double w = 1.0 / (3.0 * m * m);
  auto add = [&](std::array<double, 2> p0, std::array<double, 2> p1, std::array<double, 2> p2) {
    for (auto [c0, c1, c2] : {std::array<double, 3>{2. / 3, 1. / 6, 1. / 6}, {1. / 6, 2. / 3, 1. / 6}, {1. / 6, 1. / 6, 2. / 3}}) {
      const double x = c0 * p0[0] + c1 * p1[0] + c2 * p2[0];
      const double y = c0 * p0[1] + c1 * p1[1] + c2 * p2[1];
      rule.push_back({1.0 - x - y, x, y, w});
    }
  };
  for (int j = 0; j < m; ++j)
    for (int i = 0; i + j < m; ++i) {
      const double x = static_cast<double>(i) / m, y = static_cast<double>(j) / m, s = 1.0 / m;
      add({x, y}, {x + s, y}, {x, y + s});
      if (i + j + 1 < m) add({x + s, y}, {x + s, y + s}, {x, y + s});
    }
  return rule;
}

constexpr int kSubdivision = 4;

SparseMatrix base_operator(const OxygenConfig& cfg, const Mesh& mesh) {
  SparseMatrix a = cfg.alpha * assemble_stiffness_matrix(mesh) + mesh.mass();
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& e : robin_edges(mesh)) {
    const double len = dist(mesh.vertices()[e[0]], mesh.vertices()[e[1]]);
    const double d = cfg.beta * len / 3.0, o = cfg.beta * len / 6.0;
    trip.emplace_back(e[0], e[0], d);
    trip.emplace_back(e[1], e[1], d);
    trip.emplace_back(e[0], e[1], o);
    trip.emplace_back(e[1], e[0], o);
  }
  SparseMatrix b(mesh.num_vertices(), mesh.num_vertices());
  b.setFromTriplets(trip.begin(), trip.end());
  return a + b;
}

OxygenSystem combine(const SparseMatrix& base, const SourceTerms& source, double total_length) {
  if (!(total_length > 0)) throw Error(ErrorCode::InvariantViolation, "network length must be positive");
  return {base + (1.0 / total_length) * source.weighted_mass, source.load / total_length};
}

}  // namespace

VascularNetwork::VascularNetwork(std::vector<VascularSegment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw Error(ErrorCode::InvariantViolation, "empty vascular network");
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    const auto& s = segments_[k];
    const double len = dist(s.a, s.b);
    if (!(len > 0)) throw Error(ErrorCode::InvariantViolation, "segment " + std::to_string(k) + " has zero length");
    if (norm(s.a) > 1 + 1e-12 || norm(s.b) > 1 + 1e-12)
      throw Error(ErrorCode::InvariantViolation, "segment " + std::to_string(k) + " leaves the unit disk");
    total_length_ += len;
  }
}

void OxygenConfig::validate() const {
  if (!(alpha > 0 && beta > 0 && eps > 0 && u_star > 0))
    throw Error(ErrorCode::ConfigError, "oxygen parameters alpha, beta, eps, u_star must be positive");
}

std::vector<Point> sample_poisson_points(double lambda, std::uint64_t seed, double count_area) {
  if (!(lambda > 0)) throw Error(ErrorCode::InvalidDim, "lambda must be positive");
  if (!(count_area > 0)) throw Error(ErrorCode::InvalidDim, "count area must be positive");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x504fu};
  std::mt19937_64 rng(seq);
  std::poisson_distribution<int> count(10.0 * lambda * count_area);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = count(rng);
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double r = std::sqrt(u01(rng)), t = 2 * std::numbers::pi * u01(rng);
    pts.push_back({r * std::cos(t), r * std::sin(t)});
  }
  return pts;
}

VascularNetwork voronoi_network(std::vector<Point> sites, VoronoiEdges edges) {
  const int n = static_cast<int>(sites.size());
  if (n < 2) throw Error(ErrorCode::TooFewPoints, "Voronoi network needs at least 2 sites, got " + std::to_string(n));
  for (int j = 1; j < n; ++j)
    for (int i = 0; i < j; ++i)
      if (dist(sites[i], sites[j]) < 1e-12) {
        sites[j].x += 1e-9;
        i = -1;
      }

  std::vector<VascularSegment> segs;
  for (int i = 0; i < n; ++i) {
    Cell cell{{{-2, -2}, {2, -2}, {2, 2}, {-2, 2}}, {-1, -1, -1, -1}};
    for (int j = 0; j < n && !cell.v.empty(); ++j)
      if (j != i) clip(cell, 0.5 * (sites[i] + sites[j]), sites[j] - sites[i], j);
    const std::size_t m = cell.v.size();
    for (std::size_t k = 0; k < m; ++k) {
      const int j = cell.label[k];
      if (j <= i) continue;
      Point p = cell.v[k], q = cell.v[(k + 1) % m];
      const bool bounded = cell.label[(k + m - 1) % m] >= 0 && cell.label[(k + 1) % m] >= 0;
      if (edges == VoronoiEdges::Bounded && !bounded) continue;
      if (!clip_to_disk(p, q) || dist(p, q) < 1e-12) continue;
      segs.push_back({p, q, i, j});
    }
  }
  if (segs.empty()) throw Error(ErrorCode::TooFewPoints, "no Voronoi edge crosses the unit disk");
  return VascularNetwork(std::move(segs));
}

double distance_to_network(const VascularNetwork& net, Point p) {
  double best = INFINITY;
  for (const auto& s : net.segments()) best = std::min(best, point_segment_distance(p, s.a, s.b));
  return best;
}

double phi_value(const VascularNetwork& net, double eps, Point p) { return kernel(distance_to_network(net, p), eps); }

FeFunction phi_lambda(const VascularNetwork& net, double eps, MeshPtr mesh) {
  if (!(eps > 0)) throw Error(ErrorCode::InvalidStep, "eps must be positive");
  const SegmentIndex index(net.segments(), eps);
  Eigen::VectorXd v(mesh->num_vertices());
  for (int i = 0; i < mesh->num_vertices(); ++i) v[i] = kernel(index.distance(mesh->vertices()[i], eps), eps);
  return FeFunction(mesh, std::move(v));
}

SourceTerms assemble_source(const VascularNetwork& net, double eps, const Mesh& mesh) {
  if (!(eps > 0)) throw Error(ErrorCode::InvalidStep, "eps must be positive");
  static const std::vector<QuadPoint> rule = subdivided_rule(kSubdivision);
  const SegmentIndex index(net.segments(), eps);
  const auto& v = mesh.vertices();
  SourceTerms out{Eigen::VectorXd::Zero(mesh.num_vertices()), SparseMatrix(mesh.num_vertices(), mesh.num_vertices())};
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < mesh.num_triangles(); ++k) {
    const auto& t = mesh.triangles()[k];
    const Point a = v[t[0]], b = v[t[1]], c = v[t[2]];
    const Point centroid = (1.0 / 3.0) * (a + b + c);
    const double reach = std::max({dist(centroid, a), dist(centroid, b), dist(centroid, c)});
    if (index.distance(centroid, eps + reach) == INFINITY) continue;
    double load[3] = {0, 0, 0}, mass[3][3] = {};
    for (const auto& q : rule) {
      const Point x = q.l0 * a + q.l1 * b + q.l2 * c;
      const double phi = kernel(index.distance(x, eps), eps);
      if (phi == 0) continue;
      const double l[3] = {q.l0, q.l1, q.l2};
      for (int i = 0; i < 3; ++i) {
        load[i] += q.w * phi * l[i];
        for (int j = 0; j < 3; ++j) mass[i][j] += q.w * phi * l[i] * l[j];
      }
    }
    const double area = mesh.areas()[k];
    for (int i = 0; i < 3; ++i) {
      out.load[t[i]] += area * load[i];
      for (int j = 0; j < 3; ++j)
        if (mass[i][j] != 0) trip.emplace_back(t[i], t[j], area * mass[i][j]);
    }
  }
  out.weighted_mass.setFromTriplets(trip.begin(), trip.end());
  return out;
}

std::vector<std::array<int, 2>> robin_edges(const Mesh& mesh) {
  std::vector<std::array<int, 2>> out;
  const double cut = 1.0 - mesh.h();
  for (const auto& e : mesh.boundary_edges())
    if (norm(mesh.vertices()[e[0]]) >= cut && norm(mesh.vertices()[e[1]]) >= cut) out.push_back(e);
  return out;
}

OxygenSystem assemble_oxygen(const SourceTerms& source, double total_length, const OxygenConfig& cfg, const Mesh& mesh) {
  cfg.validate();
  return combine(base_operator(cfg, mesh), source, total_length);
}

FeFunction solve_oxygen_system(const OxygenSystem& system, MeshPtr mesh) {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(system.matrix);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "oxygen system factorization failed");
  Eigen::VectorXd u = ldlt.solve(system.rhs);
  if (ldlt.info() != Eigen::Success || !u.allFinite()) throw Error(ErrorCode::SingularSystem, "oxygen solve failed");
  return FeFunction(std::move(mesh), std::move(u));
}

FeFunction solve_oxygen(const VascularNetwork& net, const OxygenConfig& cfg, MeshPtr mesh) {
  const auto source = assemble_source(net, cfg.eps, *mesh);
  return solve_oxygen_system(assemble_oxygen(source, net.total_length(), cfg, *mesh), mesh);
}

double hypoxic_fraction(const FeFunction& u, double u_star) {
  const auto& w = u.mesh->lumped_mass();
  double low = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (u.coeffs[i] < u_star) low += w[i];
  return low / w.sum();
}

namespace {

bool has_bounded_edge(const std::vector<Point>& pts) {
  if (pts.size() < 3) return false;
  try {
    voronoi_network(pts, VoronoiEdges::Bounded);
    return true;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::TooFewPoints) return false;
    throw;
  }
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t k, int rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(rep)};
  std::array<std::uint32_t, 2> out;
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<SweepRow> mc_sweep(const std::vector<double>& lambda_grid, int n_per_lambda, const OxygenConfig& cfg,
                               MeshPtr mesh, std::uint64_t seed, int threads, const NetworkLaw& law) {
  if (lambda_grid.empty()) throw Error(ErrorCode::InvalidDim, "empty lambda grid");
  if (n_per_lambda < 2) throw Error(ErrorCode::InvalidDim, "need at least 2 replicates per lambda");
  cfg.validate();
  const SparseMatrix base = base_operator(cfg, *mesh);
  const int jobs = static_cast<int>(lambda_grid.size()) * n_per_lambda;
  std::vector<Replicate> reps(static_cast<std::size_t>(jobs));
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(jobs));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int job = next++; job < jobs; job = next++) {
      const std::size_t k = static_cast<std::size_t>(job / n_per_lambda);
      const int r = job % n_per_lambda;
      try {
        const auto pts = sample_poisson_points(lambda_grid[k], replicate_seed(seed, k, r), law.count_area);
        if (law.edges == VoronoiEdges::Bounded && !has_bounded_edge(pts)) {
          // No vessel in the tissue: zero source, u = 0 everywhere.
          reps[job] = {1.0, static_cast<int>(pts.size()), 0.0};
          continue;
        }
        const auto net = voronoi_network(pts, law.edges);
        const auto u = solve_oxygen_system(combine(base, assemble_source(net, cfg.eps, *mesh), net.total_length()), mesh);
        reps[job] = {hypoxic_fraction(u, cfg.u_star), static_cast<int>(pts.size()), net.total_length()};
      } catch (...) {
        failures[job] = std::current_exception();
      }
    }
  };
  const int nt = std::clamp(threads, 1, jobs);
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (int job = 0; job < jobs; ++job) {
    if (!failures[job]) continue;
    try {
      std::rethrow_exception(failures[job]);
    } catch (const Error& e) {
      throw Error(e.code(), "lambda " + std::to_string(lambda_grid[job / n_per_lambda]) + " replicate " +
                                std::to_string(job % n_per_lambda) + ": " + e.detail());
    }
  }

  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < lambda_grid.size(); ++k) {
    SweepRow row;
    row.lambda = lambda_grid[k];
    row.samples.assign(reps.begin() + static_cast<std::ptrdiff_t>(k * n_per_lambda),
                       reps.begin() + static_cast<std::ptrdiff_t>((k + 1) * n_per_lambda));
    double sum = 0.0;
    for (const auto& s : row.samples) sum += s.q;
    row.mean_q = sum / n_per_lambda;
    double ss = 0.0;
    for (const auto& s : row.samples) ss += (s.q - row.mean_q) * (s.q - row.mean_q);
    row.ci99_halfwidth = 2.576 * std::sqrt(ss / (n_per_lambda - 1)) / std::sqrt(static_cast<double>(n_per_lambda));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

std::string g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "lambda,mean_q,ci99_halfwidth,n\n";
  for (const auto& r : rows)
    out << g17(r.lambda) << ',' << g17(r.mean_q) << ',' << g17(r.ci99_halfwidth) << ',' << r.samples.size() << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

void write_replicates_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "lambda,rep,q,n_points,total_length\n";
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.samples.size(); ++k)
      out << g17(r.lambda) << ',' << k << ',' << g17(r.samples[k].q) << ',' << r.samples[k].n_points << ','
          << g17(r.samples[k].total_length) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<OracleRow> segment_integral_oracle(const VascularNetwork& net, const std::function<double(Point)>& v,
                                               const std::vector<double>& eps_list, int pitch_divisor) {
  if (pitch_divisor < 1) throw Error(ErrorCode::InvalidStep, "pitch divisor must be positive");
  static constexpr double gx[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
  static constexpr double gw[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                                   0.2369268850561891};
  double exact = 0.0;
  for (const auto& s : net.segments()) {
    const double half = 0.5 * dist(s.a, s.b);
    for (int q = 0; q < 5; ++q) exact += half * gw[q] * v(0.5 * (s.a + s.b) + (0.5 * gx[q]) * (s.b - s.a));
  }

  Point lo{INFINITY, INFINITY}, hi{-INFINITY, -INFINITY};
  for (const auto& s : net.segments()) {
    lo = {std::min({lo.x, s.a.x, s.b.x}), std::min({lo.y, s.a.y, s.b.y})};
    hi = {std::max({hi.x, s.a.x, s.b.x}), std::max({hi.y, s.a.y, s.b.y})};
  }
  std::vector<OracleRow> rows;
  for (double eps : eps_list) {
    if (!(eps > 0)) throw Error(ErrorCode::InvalidStep, "eps must be positive");
    const SegmentIndex index(net.segments(), eps);
    const double wx = hi.x - lo.x + 2 * eps, wy = hi.y - lo.y + 2 * eps;
    const int nx = static_cast<int>(std::ceil(wx * pitch_divisor / eps));
    const int ny = static_cast<int>(std::ceil(wy * pitch_divisor / eps));
    const double px = wx / nx, py = wy / ny;
    double sum = 0.0;
    for (int j = 0; j < ny; ++j) {
      double row = 0.0;
      for (int i = 0; i < nx; ++i) {
        const Point x{lo.x - eps + (i + 0.5) * px, lo.y - eps + (j + 0.5) * py};
        const double phi = kernel(index.distance(x, eps), eps);
        if (phi != 0) row += phi * v(x);
      }
      sum += row;
    }
    const double smoothed = sum * px * py;
    rows.push_back({eps, smoothed, exact, std::abs(smoothed - exact)});
  }
  return rows;
}

void write_oracle_csv(const std::vector<OracleRow>& rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "eps,smoothed,exact,error\n";
  for (const auto& r : rows) out << g17(r.eps) << ',' << g17(r.smoothed) << ',' << g17(r.exact) << ',' << g17(r.error) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace minn

#include "minn/operators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/SparseLU>

#include "minn/binary_io.hpp"
#include "minn/error.hpp"

namespace minn {

void DistanceFamilyParams::validate() const {
  if (!(mu1 >= 0 && mu1 <= 1 && mu2 >= -1 && mu2 <= 1 && mu3 >= 1 && mu3 <= 2))
    throw Error(ErrorCode::InvalidDim, "mu outside [0,1]x[-1,1]x[1,2]");
}

FeFunction distance_family(const DistanceFamilyParams& mu, MeshPtr mesh, double spacing) {
  mu.validate();
  if (spacing <= 0) spacing = mesh->h() / 10;
  std::vector<Point> kept;
  for (const Point& y : mesh->domain().sample_boundary(spacing))
    if (y.y > mu.mu1) kept.push_back(y);
  if (kept.empty()) throw Error(ErrorCode::EmptyBoundary, "no boundary sample with y2 > " + std::to_string(mu.mu1));

  Eigen::VectorXd u(mesh->num_vertices());
  for (int i = 0; i < mesh->num_vertices(); ++i) {
    const Point x = mesh->vertices()[i];
    const Point ax{x.x, mu.mu3 * x.y};
    double best = INFINITY;
    for (const Point& y : kept) best = std::min(best, sq_dist(y, ax));
    u[i] = std::sqrt(best) * std::exp(x.x * mu.mu2);
  }
  return FeFunction(mesh, std::move(u));
}

FeFunction area_operator(const FeFunction& u) {
  const Mesh& mesh = *u.mesh;
  const auto grads = p1_gradient(u);
  Eigen::VectorXd num = Eigen::VectorXd::Zero(mesh.num_vertices());
  Eigen::VectorXd den = Eigen::VectorXd::Zero(mesh.num_vertices());
  for (int k = 0; k < mesh.num_triangles(); ++k) {
    const double g = std::sqrt(1.0 + dot(grads[k], grads[k]));
    const double a = mesh.areas()[k];
    for (int v : mesh.triangles()[k]) {
      num[v] += a * g;
      den[v] += a;
    }
  }
  for (int i = 0; i < mesh.num_vertices(); ++i)
    if (den[i] == 0) throw Error(ErrorCode::InvariantViolation, "vertex " + std::to_string(i) + " has no element");
  return FeFunction(u.mesh, num.cwiseQuotient(den));
}

MaximalOperator::MaximalOperator(MeshPtr mesh, int radii_count, double r_max) : mesh_(std::move(mesh)) {
  if (radii_count < 1) throw Error(ErrorCode::InvalidDim, "radii_count must be positive");
  const double h = mesh_->h();
  if (!(r_max >= h)) throw Error(ErrorCode::InvalidStep, "r_max below the mesh size");
  radii_.resize(static_cast<std::size_t>(radii_count));
  for (int k = 0; k < radii_count; ++k)
    radii_[k] = radii_count == 1 ? h : h + (r_max - h) * k / (radii_count - 1);

  const int n = mesh_->num_vertices();
  const auto& v = mesh_->vertices();
  order_.resize(static_cast<std::size_t>(n) * n);
  cut_.resize(static_cast<std::size_t>(n) * radii_count);
  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) d[j] = dist(v[i], v[j]);
    int* ord = order_.data() + static_cast<std::size_t>(i) * n;
    std::iota(ord, ord + n, 0);
    std::stable_sort(ord, ord + n, [&](int a, int b) { return d[a] < d[b]; });
    int c = 0;
    for (int k = 0; k < radii_count; ++k) {
      while (c < n && d[ord[c]] <= radii_[k]) ++c;
      cut_[static_cast<std::size_t>(i) * radii_count + k] = c;
    }
  }
}

FeFunction MaximalOperator::operator()(const FeFunction& f) const {
  if (f.mesh->num_vertices() != mesh_->num_vertices())
    throw Error(ErrorCode::DimMismatch, "maximal operator built for another mesh");
  const int n = mesh_->num_vertices();
  const int nr = static_cast<int>(radii_.size());
  const auto& w = mesh_->lumped_mass();
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const int* ord = order_.data() + static_cast<std::size_t>(i) * n;
    const int* cut = cut_.data() + static_cast<std::size_t>(i) * nr;
    double sf = 0.0, sw = 0.0, best = 0.0;
    int c = 0;
    for (int k = 0; k < nr; ++k) {
      for (; c < cut[k]; ++c) {
        sf += w[ord[c]] * std::abs(f.coeffs[ord[c]]);
        sw += w[ord[c]];
      }
      best = std::max(best, sf / sw);
    }
    out[i] = best;
  }
  return FeFunction(f.mesh, std::move(out));
}

FeFunction hl_maximal(const FeFunction& f, int radii_count, double r_max) {
  return MaximalOperator(f.mesh, radii_count, r_max)(f);
}

void PorousMediaConfig::validate() const {
  if (!(newton_tol > 0)) throw Error(ErrorCode::ConfigError, "newton_tol must be positive");
  if (max_newton < 1) throw Error(ErrorCode::ConfigError, "max_newton must be positive");
  if (max_halvings < 0) throw Error(ErrorCode::ConfigError, "max_halvings must be nonnegative");
  if (!(delta_reg >= 0)) throw Error(ErrorCode::ConfigError, "delta_reg must be nonnegative");
}

namespace {

struct ElementData {
  std::array<Point, 3> grad;
  double area;
};

std::vector<ElementData> element_data(const Mesh& mesh) {
  std::vector<ElementData> out;
  out.reserve(mesh.triangles().size());
  const auto& v = mesh.vertices();
  for (int k = 0; k < mesh.num_triangles(); ++k) {
    const auto& t = mesh.triangles()[k];
    out.push_back({barycentric_gradients(v[t[0]], v[t[1]], v[t[2]]), mesh.areas()[k]});
  }
  return out;
}

Eigen::VectorXd nonlinear_diffusion(const Mesh& mesh, const std::vector<ElementData>& el, const Eigen::VectorXd& u,
                                    double delta, SparseMatrix* jacobian) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(mesh.num_vertices());
  std::vector<Eigen::Triplet<double>> trip;
  if (jacobian) trip.reserve(mesh.triangles().size() * 9);
  for (int k = 0; k < mesh.num_triangles(); ++k) {
    const auto& t = mesh.triangles()[k];
    const auto& e = el[k];
    const double u0 = u[t[0]], u1 = u[t[1]], u2 = u[t[2]];
    const double sum = u0 + u1 + u2;
    // Element mean of u^2.
    const double mean_sq = (u0 * u0 + u1 * u1 + u2 * u2 + u0 * u1 + u0 * u2 + u1 * u2) / 6.0;
    const Point g = u0 * e.grad[0] + u1 * e.grad[1] + u2 * e.grad[2];
    const double coef = (mean_sq + delta) * e.area;
    for (int a = 0; a < 3; ++a) {
      const double gi = dot(e.grad[a], g);
      r[t[a]] += coef * gi;
      if (!jacobian) continue;
      for (int b = 0; b < 3; ++b)
        trip.emplace_back(t[a], t[b], coef * dot(e.grad[a], e.grad[b]) + (u[t[b]] + sum) / 6.0 * e.area * gi);
    }
  }
  if (jacobian) {
    jacobian->resize(mesh.num_vertices(), mesh.num_vertices());
    jacobian->setFromTriplets(trip.begin(), trip.end());
  }
  return r;
}

}  // namespace

Eigen::VectorXd porous_media_residual(const FeFunction& u, const FeFunction& f, double delta_reg) {
  const Mesh& mesh = *u.mesh;
  return nonlinear_diffusion(mesh, element_data(mesh), u.coeffs, delta_reg, nullptr) + mesh.mass() * (u.coeffs - f.coeffs);
}

SparseMatrix porous_media_jacobian(const FeFunction& u, double delta_reg) {
  const Mesh& mesh = *u.mesh;
  SparseMatrix jac;
  nonlinear_diffusion(mesh, element_data(mesh), u.coeffs, delta_reg, &jac);
  return jac + mesh.mass();
}

FeFunction porous_media_solve(const FeFunction& f, const PorousMediaConfig& cfg, NewtonReport* report) {
  cfg.validate();
  const Mesh& mesh = *f.mesh;
  const auto el = element_data(mesh);
  const SparseMatrix& m = mesh.mass();
  const Eigen::VectorXd load = m * f.coeffs;
  const double tol = cfg.newton_tol * (1.0 + f.coeffs.norm());

  auto residual = [&](const Eigen::VectorXd& u, SparseMatrix* jac) {
    return Eigen::VectorXd(nonlinear_diffusion(mesh, el, u, cfg.delta_reg, jac) + m * u - load);
  };

  NewtonReport local;
  NewtonReport& rep = report ? *report : local;
  rep = {};
  Eigen::VectorXd u = load.cwiseQuotient(mesh.lumped_mass());
  Eigen::SparseLU<SparseMatrix> lu;
  bool analyzed = false;
  for (int it = 0;; ++it) {
    SparseMatrix jac;
    const Eigen::VectorXd r = residual(u, &jac);
    const double rn = r.norm();
    rep.residuals.push_back(rn);
    if (!std::isfinite(rn)) throw Error(ErrorCode::NewtonDiverged, "non-finite residual at iteration " + std::to_string(it));
    if (rn <= tol) {
      rep.iterations = it;
      return FeFunction(f.mesh, std::move(u));
    }
    if (it == cfg.max_newton)
      throw Error(ErrorCode::NewtonDiverged, "residual " + std::to_string(rn) + " above tolerance after " +
                                                 std::to_string(it) + " iterations");
    jac += m;
    jac.makeCompressed();
    if (!analyzed) {
      lu.analyzePattern(jac);
      analyzed = true;
    }
    lu.factorize(jac);
    if (lu.info() != Eigen::Success) throw Error(ErrorCode::NewtonDiverged, "singular Jacobian at iteration " + std::to_string(it));
    const Eigen::VectorXd step = lu.solve(-r);
    // Halve on residual increase; without a decrease keep the best trial.
    double t = 1.0, best_norm = INFINITY;
    Eigen::VectorXd best;
    for (int k = 0; k <= cfg.max_halvings; ++k, t *= 0.5) {
      Eigen::VectorXd trial = u + t * step;
      const double tn = residual(trial, nullptr).norm();
      if (tn < best_norm) {
        best_norm = tn;
        best = std::move(trial);
      }
      if (tn < rn) break;
    }
    u = std::move(best);
  }
}

OperatorId parse_operator_id(const std::string& name) {
  if (name == "dist_family") return OperatorId::DistFamily;
  if (name == "area") return OperatorId::Area;
  if (name == "hl_max") return OperatorId::HlMax;
  if (name == "porous") return OperatorId::Porous;
  throw Error(ErrorCode::ConfigError, "unknown operator '" + name + "' (expected dist_family, area, hl_max, porous)");
}

const char* to_string(OperatorId id) {
  switch (id) {
    case OperatorId::DistFamily: return "dist_family";
    case OperatorId::Area: return "area";
    case OperatorId::HlMax: return "hl_max";
    case OperatorId::Porous: return "porous";
  }
  return "?";
}

CovKernel default_kernel(OperatorId op, const Mesh& mesh) {
  switch (op) {
    case OperatorId::Area: return CovKernel::scaled_gauss(mesh.total_area());
    case OperatorId::Porous: return CovKernel::cauchy();
    default: return CovKernel::gauss();
  }
}

namespace {

int effective_kl_modes(const DatasetSpec& spec, const Mesh& mesh) {
  const int k = spec.kl_modes > 0 ? spec.kl_modes : (spec.op == OperatorId::Porous ? 20 : 100);
  return std::min(k, mesh.num_vertices());
}

std::mt19937_64 sample_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x4d55u};
  return std::mt19937_64(seq);
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec, MeshPtr mesh, int threads) {
  if (spec.n_samples < 0) throw Error(ErrorCode::ConfigError, "n_samples must be nonnegative");
  spec.porous.validate();
  const int n = spec.n_samples;
  const int nh = mesh->num_vertices();
  const bool field_input = spec.op != OperatorId::DistFamily;

  Dataset data;
  data.output_mesh = mesh;
  data.inputs.resize(field_input ? nh : 3, n);
  data.targets.resize(nh, n);

  KlBasis basis;
  std::optional<MaximalOperator> maximal;
  if (field_input && n > 0) basis = discrete_kl(default_kernel(spec.op, *mesh), mesh, effective_kl_modes(spec, *mesh));
  if (spec.op == OperatorId::HlMax && n > 0) maximal.emplace(mesh, spec.radii_count, spec.r_max);

  auto generate = [&](int s) {
    const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(s);
    switch (spec.op) {
      case OperatorId::DistFamily: {
        auto rng = sample_rng(seed);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const double a = u01(rng), b = u01(rng), c = u01(rng);
        const DistanceFamilyParams mu{a, 2.0 * b - 1.0, 1.0 + c};
        data.inputs.col(s) = Eigen::Vector3d(mu.mu1, mu.mu2, mu.mu3);
        data.targets.col(s) = distance_family(mu, mesh, spec.boundary_spacing).coeffs;
        break;
      }
      case OperatorId::Area: {
        const auto f = sample_field(basis, seed);
        data.inputs.col(s) = f.coeffs;
        data.targets.col(s) = area_operator(f).coeffs;
        break;
      }
      case OperatorId::HlMax: {
        const auto f = sample_field(basis, seed);
        data.inputs.col(s) = f.coeffs;
        data.targets.col(s) = (*maximal)(f).coeffs;
        break;
      }
      case OperatorId::Porous: {
        const auto f = square_pushforward(sample_field(basis, seed));
        data.inputs.col(s) = f.coeffs;
        data.targets.col(s) = porous_media_solve(f, spec.porous).coeffs;
        break;
      }
    }
  };

  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int s = next++; s < n; s = next++) {
      try {
        generate(s);
      } catch (...) {
        failures[s] = std::current_exception();
      }
    }
  };
  const int nt = std::clamp(threads, 1, std::max(1, n));
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (int s = 0; s < n; ++s) {
    if (!failures[s]) continue;
    try {
      std::rethrow_exception(failures[s]);
    } catch (const Error& e) {
      throw Error(e.code(), "sample " + std::to_string(s) + ": " + e.detail());
    }
  }
  return data;
}

namespace {

void write_matrix(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  // Column s of m is sample s, which is row s of the file.
  io::write_u64(out, static_cast<std::uint64_t>(m.cols()));
  io::write_u64(out, static_cast<std::uint64_t>(m.rows()));
  io::write_f64s(out, std::span<const double>(m.data(), m.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    const auto rows = io::read_u64(in);
    const auto cols = io::read_u64(in);
    if (rows > (1u << 30) || cols > (1u << 30)) throw Error(ErrorCode::ParseError, "implausible matrix shape");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows));
    io::read_f64s(in, std::span<double>(m.data(), m.size()));
    if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::ParseError, "trailing bytes");
    return m;
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.detail());
  }
}

}  // namespace

void write_dataset(const Dataset& data, const DatasetSpec& spec, const std::filesystem::path& dir,
                   const std::string& mesh_file) {
  std::filesystem::create_directories(dir);
  write_matrix(data.inputs, dir / "inputs.bin");
  write_matrix(data.targets, dir / "targets.bin");
  std::ofstream meta(dir / "meta");
  if (!meta) throw Error(ErrorCode::IoError, "cannot write " + (dir / "meta").string());
  const bool field_input = spec.op != OperatorId::DistFamily;
  const CovKernel kernel = default_kernel(spec.op, *data.output_mesh);
  char scale[32];
  std::snprintf(scale, sizeof scale, "%.17g", field_input ? kernel.scale : 0.0);
  meta << "operator " << to_string(spec.op) << '\n'
       << "n " << data.size() << '\n'
       << "input_dim " << data.inputs.rows() << '\n'
       << "output_dim " << data.targets.rows() << '\n'
       << "mesh " << mesh_file << '\n'
       << "seed " << spec.seed << '\n'
       << "kernel " << (field_input ? to_string(kernel.kind) : "none") << '\n'
       << "kernel_scale " << scale << '\n'
       << "kl_modes " << (field_input ? effective_kl_modes(spec, *data.output_mesh) : 0) << '\n';
  if (!meta) throw Error(ErrorCode::IoError, "write failed: " + (dir / "meta").string());
}

DatasetMeta read_dataset_meta(const std::filesystem::path& dir) {
  const auto path = dir / "meta";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  DatasetMeta m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key;
    std::getline(ls >> std::ws, value);
    try {
      if (key == "operator") m.op = value;
      else if (key == "n") m.n = std::stoi(value);
      else if (key == "input_dim") m.input_dim = std::stoi(value);
      else if (key == "output_dim") m.output_dim = std::stoi(value);
      else if (key == "mesh") m.mesh_file = value;
      else if (key == "seed") m.seed = std::stoull(value);
      else if (key == "kernel") m.kernel = value;
      else if (key == "kernel_scale") m.kernel_scale = std::stod(value);
      else if (key == "kl_modes") m.kl_modes = std::stoi(value);
      else throw Error(ErrorCode::ParseError, "unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": bad value for " + key);
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.detail());
    }
  }
  if (m.op.empty()) throw Error(ErrorCode::ParseError, path.string() + ": missing operator");
  return m;
}

Dataset read_dataset(const std::filesystem::path& dir, MeshPtr mesh) {
  const auto meta = read_dataset_meta(dir);
  Dataset d{read_matrix(dir / "inputs.bin"), read_matrix(dir / "targets.bin"), std::move(mesh)};
  if (d.inputs.cols() != meta.n || d.inputs.rows() != meta.input_dim || d.targets.cols() != meta.n ||
      d.targets.rows() != meta.output_dim)
    throw Error(ErrorCode::DimMismatch, dir.string() + ": data files disagree with meta");
  if (d.targets.rows() != d.output_mesh->num_vertices())
    throw Error(ErrorCode::DimMismatch, dir.string() + ": targets have " + std::to_string(d.targets.rows()) +
                                            " rows, mesh has " + std::to_string(d.output_mesh->num_vertices()) + " vertices");
  return d;
}

}  // namespace minn

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "minn/cli.hpp"
#include "minn/error.hpp"
#include "minn/mesh.hpp"
#include "minn/nn.hpp"
#include "minn/operators.hpp"
#include "minn/sparsity.hpp"
#include "minn/train.hpp"
#include "minn/vascular.hpp"

using namespace minn;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double time_limit_s, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v{false, ""};
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < time_limit_s;
  const bool pass = v.pass && in_time;
  if (!pass) ++failures;
  std::printf("CRITERION %d %s  %s: %s; %.2f s (limit %.0f s)%s\n", id, pass ? "PASS" : "FAIL", title, v.detail.c_str(),
              secs, time_limit_s, in_time ? "" : " TOO SLOW");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Verdict dense_recovery() {
  const auto d = Domain::parse("crescent");
  const auto a = build_mesh(d, 0.25), b = build_mesh(d, 0.2);
  const double r = 3.0;  // the crescent lies in the unit disk, diameter 2
  const Layer layer = make_mesh_informed(*a, *b, r, Activation::Identity, 5);
  const std::size_t full = static_cast<std::size_t>(a->num_vertices()) * static_cast<std::size_t>(b->num_vertices());
  bool ok = layer.weight_count() == full;
  // Full rows in CSR order are the row-major dense matrix.
  const int n_in = a->num_vertices(), n_out = b->num_vertices();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  MinnModel model({layer});
  for (double& w : model.layers()[0].weights()) w = g(rng);
  for (int i = 0; i < n_out; ++i) model.layers()[0].bias()[i] = g(rng);
  const auto w = model.layers()[0].weights();
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd x(n_in);
    for (auto& v : x) v = g(rng);
    const Eigen::VectorXd y = model.forward(x);
    for (int i = 0; i < n_out; ++i) {
      double z = model.layers()[0].bias()[i];
      for (int j = 0; j < n_in; ++j) z += w[static_cast<std::size_t>(i) * n_in + j] * x[j];
      worst = std::max(worst, std::abs(z - y[i]));
    }
  }
  ok = ok && worst <= 1e-10;
  return {ok, fmt("nnz %zu vs N_h*N_h' %zu, max |forward - dense| %.2e", layer.weight_count(), full, worst)};
}

Verdict nonzero_bound_check() {
  std::mt19937_64 rng(101);
  const char* domains[] = {"crescent", "plate_holes", "unit_disk", "disk_square_hole"};
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_real_distribution<double> uh(0.07, 0.5), u01(0.0, 1.0);
  int checked = 0, violations = 0;
  double tightest = 0.0;
  while (checked < 50) {
    const auto domain = Domain::parse(domains[pick(rng)]);
    const auto in = build_mesh(domain, uh(rng)), out = build_mesh(domain, uh(rng));
    const auto ok_size = [](const Mesh& m) { return m.num_vertices() >= 50 && m.num_vertices() <= 1000; };
    if (!ok_size(*in) || !ok_size(*out)) continue;
    const auto& v = out->vertices();
    double diam = 0.0;
    for (const auto& p : v)
      for (const auto& q : v) diam = std::max(diam, dist(p, q));
    const double r = out->h_min() * std::pow(diam / out->h_min(), u01(rng));
    std::size_t nnz = 0;
    for (const auto& y : out->vertices())
      for (const auto& x : in->vertices()) nnz += dist(x, y) <= r;
    const double ratio = out->sigma() * r / out->h_min();
    const double bound = in->num_vertices() * 3.0 * ratio * ratio;
    if (double(nnz) > bound) ++violations;
    if (support_pattern(in->vertices(), out->vertices(), r).nnz() != nnz) ++violations;
    tightest = std::max(tightest, double(nnz) / bound);
    ++checked;
  }
  return {violations == 0, fmt("%d triples, %d violations, max nnz/bound %.3g", checked, violations, tightest)};
}

Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (auto& v : m.reshaped()) v = g(rng);
  return m;
}

Verdict gradients() {
  const Domain d = Domain::parse("unit_disk");
  std::mt19937_64 pick(77);
  std::uniform_real_distribution<double> uh(0.7, 1.2), ur(0.5, 1.2);
  int models = 0;
  double worst = 0.0;
  std::string kinds;
  for (std::uint64_t seed = 1; models < 5 && seed < 500; ++seed) {
    MeshRegistry reg{{"a", build_mesh(d, uh(pick))}, {"b", build_mesh(d, uh(pick))}};
    const bool three = seed % 2 == 0;
    const std::string spec = three ? fmt("in(3) dense(b) mi(b,a,%.3f) mi(a,a,%.3f)", ur(pick), ur(pick))
                                   : fmt("in(3) dense(b) mi(b,a,%.3f)", ur(pick));
    MinnModel model;
    try {
      model = parse_architecture(spec, reg, seed);
    } catch (const Error&) {
      continue;
    }
    if (model.param_count() > 300) continue;
    std::mt19937_64 rng(seed + 100);
    for (auto& l : model.layers()) l.bias() = random_matrix(l.out_dim(), 1, rng, 0.3);
    Dataset data{random_matrix(3, 6, rng), random_matrix(reg["a"]->num_vertices(), 6, rng), reg["a"]};
    // Skip models with a pre-activation near the kink.
    double kink = INFINITY;
    Eigen::MatrixXd act = data.inputs;
    for (const auto& l : model.layers()) {
      const Eigen::MatrixXd z = l.affine(act);
      if (l.activation() != Activation::Identity) kink = std::min(kink, z.cwiseAbs().minCoeff());
      act = z.unaryExpr([&](double v) { return activate(l.activation(), v); });
    }
    if (kink < 1e-4) continue;
    ++models;
    kinds += fmt("%s%d layers/%zu params", models > 1 ? ", " : "", model.depth() + 1, model.param_count());
    const Eigen::VectorXd g = gradient(model, data);
    const Eigen::VectorXd p = model.parameters();
    MinnModel work = model;
    const double step = 1e-6;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      Eigen::VectorXd q = p;
      q[k] += step;
      work.set_parameters(q);
      const double fp = loss_l2_mse(work, data);
      q[k] -= 2 * step;
      work.set_parameters(q);
      const double fm = loss_l2_mse(work, data);
      const double fd = (fp - fm) / (2 * step);
      worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-4}));
    }
  }
  return {models == 5 && worst <= 1e-5, fmt("%d models (%s), worst relative error %.2e", models, kinds.c_str(), worst)};
}

Verdict init_stats() {
  const auto mesh = build_mesh(Domain::parse("unit_disk"), 0.05);
  const Layer layer = make_mesh_informed(*mesh, *mesh, 0.3, Activation::LeakyRelu, 2024);
  const auto w = layer.weights();
  const double n = static_cast<double>(w.size());
  double mean = 0.0, sq = 0.0;
  for (double v : w) mean += v;
  mean /= n;
  for (double v : w) sq += (v - mean) * (v - mean);
  const double var = sq / (n - 1);
  const double rel = var * n - 1.0;
  return {n >= 1e5 && std::abs(rel) <= 0.1, fmt("nnz %.0f, variance*nnz %.4f (deviation %+.2f%%)", n, var * n, 100 * rel)};
}

Verdict operator_oracles() {
  bool ok = true;
  std::string notes;
  const auto mesh = build_mesh(Domain::parse("disk_square_hole"), 0.08);
  const int n = mesh->num_vertices();
  ok = ok && n <= 1500;
  notes += fmt("N_h %d", n);

  Eigen::VectorXd lin(n);
  for (int i = 0; i < n; ++i) lin[i] = 2 * mesh->vertices()[i].x;
  const auto area = area_operator(FeFunction(mesh, lin));
  const double area_err = (area.coeffs.array() - std::sqrt(5.0)).abs().maxCoeff();
  ok = ok && area_err <= 1e-10;
  notes += fmt(", area |G(2x1) - sqrt5| %.1e", area_err);

  const MaximalOperator maximal(mesh, 50, 2.0);
  const auto c = maximal(FeFunction(mesh, Eigen::VectorXd::Constant(n, -1.7)));
  const double const_err = (c.coeffs.array() - 1.7).abs().maxCoeff();
  std::mt19937_64 rng(5);
  const Eigen::VectorXd f = random_matrix(n, 1, rng);
  const auto m1 = maximal(FeFunction(mesh, f));
  const auto m2 = maximal(FeFunction(mesh, 3.25 * f));
  const double homog = (m2.coeffs - 3.25 * m1.coeffs).cwiseAbs().maxCoeff() / m2.coeffs.cwiseAbs().maxCoeff();
  ok = ok && const_err <= 1e-12 && homog <= 1e-12;
  notes += fmt(", maximal const err %.1e homogeneity %.1e", const_err, homog);

  NewtonReport report;
  const auto u = porous_media_solve(FeFunction(mesh, Eigen::VectorXd::Constant(n, 0.8)), {}, &report);
  const double res = report.residuals.back();
  const double u_err = (u.coeffs.array() - 0.8).abs().maxCoeff();
  ok = ok && res <= 1e-9 && report.iterations <= 2 && u_err <= 1e-12;
  notes += fmt(", porous const %d iterations residual %.1e", report.iterations, res);

  const auto cres = build_mesh(Domain::parse("crescent"), 0.08);
  ok = ok && cres->num_vertices() <= 1500;
  const double spacing = cres->h() / 10;
  const auto dfam = distance_family({0.0, 0.0, 1.0}, cres, spacing);
  double worst = 0.0;
  int kept = 0;
  for (int i = 0; i < cres->num_vertices(); ++i) {
    const Point x = cres->vertices()[i];
    if (std::abs(cres->domain().signed_distance(x)) <= 1e-12 && x.y > 0) {
      ++kept;
      worst = std::max(worst, dfam.coeffs[i]);
    }
  }
  ok = ok && kept > 0 && worst <= spacing;
  notes += fmt(", distance family max %.2e on %d kept-boundary nodes (spacing %.2e)", worst, kept, spacing);
  return {ok, notes};
}

Verdict smoothed_integral() {
  const VascularNetwork net(std::vector<VascularSegment>{{{-0.55, -0.45}, {0.7, 0.35}}});
  const std::vector<double> eps{0.2, 0.1, 0.05, 0.025};
  bool ok = true;
  std::string notes = fmt("segment length %.3f", net.total_length());
  for (const auto& [name, v] : {std::pair<const char*, std::function<double(Point)>>{"1", [](Point) { return 1.0; }},
                                std::pair<const char*, std::function<double(Point)>>{"x1", [](Point p) { return p.x; }}}) {
    const auto rows = segment_integral_oracle(net, v, eps);
    notes += fmt("; v=%s errors", name);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      notes += fmt(" %.3e", rows[k].error);
      if (k > 0) {
        const double ratio = rows[k].error / rows[k - 1].error;
        ok = ok && ratio >= 0.3 && ratio <= 0.8;
        notes += fmt("(x%.2f)", ratio);
      }
    }
    const double rel = rows.back().error / std::abs(rows.back().exact);
    ok = ok && rel <= 0.02;
    notes += fmt(", relative %.2f%% at eps 0.025", 100 * rel);
  }
  return {ok, notes};
}

struct Exp1 {
  double minn_test = 0, minn_train = 0, dense_test = 0, dense_train = 0;
  std::size_t minn_params = 0, dense_params = 0;
  int nodes = 0, n_test = 0;
};

const char* kExp1Arch = "in(3) dense(100) dense(9h) mi(9h,3h,0.4) mi(3h,h,0.2)";

MeshRegistry exp1_meshes() {
  const auto d = Domain::parse("crescent");
  return {{"h", build_mesh(d, 0.1)}, {"3h", build_mesh(d, 0.1 * 3)}, {"9h", build_mesh(d, 0.1 * 9)}};
}

Exp1 run_exp1() {
  const auto reg = exp1_meshes();
  DatasetSpec spec;
  spec.op = OperatorId::DistFamily;
  spec.n_samples = 50;
  spec.seed = 42;
  const Dataset train_set = make_dataset(spec, reg.at("h"));
  spec.n_samples = 100;
  spec.seed = 42 + 50;
  const Dataset test_set = make_dataset(spec, reg.at("h"));
  TrainConfig tc;
  tc.epochs = 50;
  tc.iterations_per_epoch = 20;
  tc.seed = 42;
  Exp1 r;
  r.nodes = reg.at("h")->num_vertices();
  r.n_test = test_set.size();
  for (const bool dense : {false, true}) {
    MinnModel model = parse_architecture(dense ? dense_counterpart(kExp1Arch) : kExp1Arch, reg, 42);
    train(model, train_set, tc);
    (dense ? r.dense_test : r.minn_test) = relative_l2_error(model, test_set);
    (dense ? r.dense_train : r.minn_train) = relative_l2_error(model, train_set);
    (dense ? r.dense_params : r.minn_params) = model.param_count();
  }
  return r;
}

Verdict experiment1() {
  const Exp1 r = run_exp1();
  const double minn_gap = r.minn_test - r.minn_train, dense_gap = r.dense_test - r.dense_train;
  const bool a = r.minn_test <= 0.10, b = r.minn_test <= r.dense_test, c = minn_gap <= dense_gap;
  return {r.nodes >= 500 && r.nodes <= 900 && r.n_test >= 100 && a && b && c,
          fmt("N_h %d, %d test samples; MINN test %.2f%% (<=10%%: %s), dense test %.2f%% (MINN<=dense: %s), "
              "gap MINN %.2f%% vs dense %.2f%% (MINN<=dense: %s)",
              r.nodes, r.n_test, 100 * r.minn_test, a ? "yes" : "no", 100 * r.dense_test, b ? "yes" : "no",
              100 * minn_gap, 100 * dense_gap, c ? "yes" : "no")};
}

Verdict param_ratio() {
  const auto reg = exp1_meshes();
  const auto minn = parse_architecture(kExp1Arch, reg, 1);
  const auto dense = parse_architecture(dense_counterpart(kExp1Arch), reg, 1);
  const double ratio = double(dense.param_count()) / double(minn.param_count());
  return {ratio >= 5, fmt("dense %zu / MINN %zu parameters = %.2f", dense.param_count(), minn.param_count(), ratio)};
}

Verdict uq_trend() {
  const auto mesh = build_mesh(Domain::parse("unit_disk"), 0.06);
  std::vector<double> grid;
  for (int k = 1; k <= 8; ++k) grid.push_back(k);
  const auto rows = mc_sweep(grid, 100, OxygenConfig{}, mesh, 42);
  std::string notes = fmt("N_h %d, mean Q:", mesh->num_vertices());
  for (const auto& r : rows) notes += fmt(" %.3g", r.mean_q);
  bool decreasing = true;
  for (int k = 1; k < 5; ++k) decreasing = decreasing && rows[k].mean_q < rows[k - 1].mean_q;
  bool positive = true;
  for (const auto& r : rows) positive = positive && r.mean_q > 0;
  double r2 = NAN;
  if (positive) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
      const double x = r.lambda, y = std::log(r.mean_q);
      sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
    }
    const double cov = sxy - sx * sy / n, vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
    r2 = cov * cov / (vx * vy);
  }
  const bool anchor = rows[0].mean_q > rows[2].mean_q;
  notes += fmt("; strictly decreasing 1..5: %s; R^2 of log fit: %s; lambda=1 above lambda=3: %s", decreasing ? "yes" : "no",
               positive ? fmt("%.3f", r2).c_str() : "undefined (mean Q = 0)", anchor ? "yes" : "no");
  return {mesh->num_vertices() <= 2000 && decreasing && positive && r2 >= 0.9 && anchor, notes};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

Verdict determinism() {
  const fs::path smoke = fs::path(MINN_SOURCE_DIR) / "configs" / "smoke";
  const std::vector<std::pair<std::string, std::vector<std::string>>> pipelines{
      {"exp1", {"mesh", "dataset", "train", "eval"}}, {"exp2", {"mesh", "dataset", "train", "eval"}},
      {"exp3", {"mesh", "dataset", "train", "eval"}}, {"exp4", {"mesh", "dataset", "train", "eval"}},
      {"uq", {"mesh", "uq"}},                         {"oracle", {"oracle"}}};
  int csv = 0, files = 0, mismatched = 0;
  for (const auto& [name, commands] : pipelines) {
    std::map<std::string, std::string> first;
    for (int pass = 0; pass < 2; ++pass) {
      const fs::path dir = fs::temp_directory_path() / fmt("minn_accept_%s_%d", name.c_str(), pass);
      fs::remove_all(dir);
      for (const auto& c : commands) {
        CliOptions opt{c, smoke / (name + ".ini"), std::nullopt, dir, std::nullopt};
        std::ostringstream out, err;
        if (run(opt, out, err) != 0) return {false, name + " " + c + " failed: " + err.str()};
      }
      const auto snap = snapshot(dir);
      if (pass == 0) {
        first = snap;
        continue;
      }
      for (const auto& [path, bytes] : snap) {
        ++files;
        csv += path.ends_with(".csv");
        const auto it = first.find(path);
        if (it == first.end() || it->second != bytes) ++mismatched;
      }
      if (snap.size() != first.size()) ++mismatched;
    }
  }
  return {mismatched == 0 && csv > 0,
          fmt("6 smoke pipelines run twice: %d files (%d CSV) compared, %d differ", files, csv, mismatched)};
}

}  // namespace

int main() {
  criterion(1, "dense recovery", 1, dense_recovery);
  criterion(2, "nonzero bound", 30, nonzero_bound_check);
  criterion(3, "gradient check", 60, gradients);
  criterion(4, "initialization variance", 5, init_stats);
  criterion(5, "operator oracles", 60, operator_oracles);
  criterion(6, "smoothed line integral", 30, smoothed_integral);
  criterion(7, "distance family, MINN vs dense", 900, experiment1);
  criterion(8, "parameter ratio", 1, param_ratio);
  criterion(9, "hypoxia trend", 1200, uq_trend);
  criterion(10, "determinism", 120, determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

#include "minn/cli.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <vector>

#include "json.hpp"
#include "minn/error.hpp"
#include "minn/mesh.hpp"
#include "minn/nn.hpp"
#include "minn/operators.hpp"
#include "minn/train.hpp"
#include "minn/vascular.hpp"

namespace minn {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct Context {
  Config cfg;
  std::string id;
  std::uint64_t seed = 0;
  fs::path out;
  int threads = 1;
};

struct MeshLevel {
  std::string name;
  int factor = 1;
};

Error config_error(const std::string& msg) { return Error(ErrorCode::ConfigError, msg); }

std::vector<MeshLevel> mesh_levels(const Config& cfg) {
  std::vector<MeshLevel> levels;
  bool has_base = false;
  for (double f : cfg.has("mesh", "levels") ? cfg.get_doubles("mesh", "levels") : std::vector<double>{1.0}) {
    if (f < 1 || f != std::floor(f)) throw config_error("[mesh] levels must be positive integers");
    const int k = static_cast<int>(f);
    has_base = has_base || k == 1;
    levels.push_back({k == 1 ? "h" : std::to_string(k) + "h", k});
  }
  if (!has_base) throw config_error("[mesh] levels must include 1");
  return levels;
}

fs::path mesh_path(const Context& ctx, const std::string& name) { return ctx.out / "mesh" / (name + ".mesh"); }

void require_file(const fs::path& p, const char* producer) {
  if (!fs::exists(p))
    throw Error(ErrorCode::IoError, "missing " + p.string() + " (produced by the '" + producer + "' command)");
}

MeshPtr load_base_mesh(const Context& ctx) {
  const auto p = mesh_path(ctx, "h");
  require_file(p, "mesh");
  return load_mesh(p);
}

MeshRegistry load_registry(const Context& ctx) {
  MeshRegistry reg;
  const auto levels = mesh_levels(ctx.cfg);
  for (const auto& l : levels) require_file(mesh_path(ctx, l.name), "mesh");
  for (const auto& l : levels) reg[l.name] = load_mesh(mesh_path(ctx, l.name));
  return reg;
}

int positive_int(const Config& cfg, const std::string& section, const std::string& key, std::int64_t fallback) {
  const auto v = cfg.get_int(section, key, fallback);
  if (v < 1 || v > 1'000'000'000) throw config_error("[" + section + "] " + key + " must be a positive integer");
  return static_cast<int>(v);
}

DatasetSpec dataset_spec(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  DatasetSpec spec;
  spec.op = parse_operator_id(cfg.get_string("dataset", "operator"));
  spec.seed = ctx.seed;
  spec.kl_modes = static_cast<int>(cfg.get_int("dataset", "kl_modes", 0));
  spec.boundary_spacing = cfg.get_double("dataset", "boundary_spacing", 0.0);
  spec.radii_count = positive_int(cfg, "dataset", "radii_count", 50);
  spec.r_max = cfg.get_double("dataset", "r_max", 2.0);
  spec.porous.newton_tol = cfg.get_double("dataset", "newton_tol", spec.porous.newton_tol);
  spec.porous.max_newton = positive_int(cfg, "dataset", "max_newton", spec.porous.max_newton);
  spec.porous.validate();
  return spec;
}

TrainConfig train_config(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("train", "epochs", tc.epochs));
  const auto opt = cfg.get_string("train", "optimizer", "lbfgs");
  if (opt == "lbfgs") tc.optimizer = OptimizerKind::Lbfgs;
  else if (opt == "adam") tc.optimizer = OptimizerKind::Adam;
  else throw config_error("[train] optimizer must be lbfgs or adam, got '" + opt + "'");
  tc.lr = cfg.get_double("train", "lr", tc.optimizer == OptimizerKind::Adam ? 1e-3 : 1.0);
  tc.memory = static_cast<int>(cfg.get_int("train", "memory", tc.memory));
  tc.max_line_search = static_cast<int>(cfg.get_int("train", "max_line_search", tc.max_line_search));
  tc.armijo_c = cfg.get_double("train", "armijo_c", tc.armijo_c);
  tc.fixed_step = cfg.get_bool("train", "fixed_step", tc.fixed_step);
  tc.iterations_per_epoch = static_cast<int>(cfg.get_int("train", "iterations_per_epoch", tc.iterations_per_epoch));
  tc.beta1 = cfg.get_double("train", "beta1", tc.beta1);
  tc.beta2 = cfg.get_double("train", "beta2", tc.beta2);
  tc.adam_eps = cfg.get_double("train", "adam_eps", tc.adam_eps);
  tc.seed = ctx.seed;
  tc.validate();
  return tc;
}

std::vector<std::pair<std::string, std::string>> model_specs(const Config& cfg) {
  const auto arch = cfg.get_string("model", "architecture");
  std::vector<std::pair<std::string, std::string>> out{{"minn", arch}};
  if (cfg.get_bool("model", "dense_counterpart", true)) out.emplace_back("dense", dense_counterpart(arch));
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorCode::IoError, "cannot write " + p.string());
}

Json cmd_mesh(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const Domain domain = Domain::parse(cfg.get_string("mesh", "domain"));
  const double h = cfg.get_double("mesh", "h");
  if (!(h > 0)) throw config_error("[mesh] h must be positive, got " + cfg.get_string("mesh", "h"));
  fs::create_directories(ctx.out / "mesh");
  Json meshes = Json::array();
  for (const auto& l : mesh_levels(cfg)) {
    const auto mesh = build_mesh(domain, h * l.factor);
    save_mesh(*mesh, mesh_path(ctx, l.name));
    meshes.push_back({{"name", l.name},
                      {"file", "mesh/" + l.name + ".mesh"},
                      {"target_h", h * l.factor},
                      {"vertices", mesh->num_vertices()},
                      {"triangles", mesh->num_triangles()},
                      {"h", mesh->h()},
                      {"h_min", mesh->h_min()},
                      {"sigma", mesh->sigma()}});
  }
  return {{"meshes", meshes}};
}

Json cmd_dataset(const Context& ctx) {
  const auto mesh = load_base_mesh(ctx);
  DatasetSpec spec = dataset_spec(ctx);
  const int n_train = positive_int(ctx.cfg, "dataset", "n_train", 50);
  const int n_test = positive_int(ctx.cfg, "dataset", "n_test", 100);
  Json parts = Json::object();
  for (const auto& [name, n, seed] : {std::tuple{"train", n_train, ctx.seed},
                                      std::tuple{"test", n_test, ctx.seed + static_cast<std::uint64_t>(n_train)}}) {
    spec.n_samples = n;
    spec.seed = seed;
    const auto data = make_dataset(spec, mesh, ctx.threads);
    const auto dir = ctx.out / "data" / name;
    fs::create_directories(dir);
    write_dataset(data, spec, dir, "mesh/h.mesh");
    parts[name] = {{"dir", std::string("data/") + name}, {"n", n}, {"seed", seed}, {"input_dim", data.inputs.rows()}};
  }
  return {{"operator", to_string(spec.op)}, {"output_dim", mesh->num_vertices()}, {"datasets", parts}};
}

Json cmd_train(const Context& ctx) {
  const TrainConfig tc = train_config(ctx);
  const auto specs = model_specs(ctx.cfg);
  const auto reg = load_registry(ctx);
  require_file(ctx.out / "data" / "train" / "meta", "dataset");
  const Dataset data = read_dataset(ctx.out / "data" / "train", reg.at("h"));
  fs::create_directories(ctx.out / "model");
  Json models = Json::object();
  for (const auto& [name, arch] : specs) {
    MinnModel model = parse_architecture(arch, reg, ctx.seed);
    if (model.in_dim() != data.inputs.rows() || model.out_dim() != data.targets.rows())
      throw Error(ErrorCode::DimMismatch, name + " model maps " + std::to_string(model.in_dim()) + " -> " +
                                              std::to_string(model.out_dim()) + " but the dataset is " +
                                              std::to_string(data.inputs.rows()) + " -> " +
                                              std::to_string(data.targets.rows()));
    const TrainResult result = train(model, data, tc);
    save_model(model, ctx.out / "model" / (name + ".model"));
    write_trace_csv(result, ctx.out / "model" / (name + "_trace.csv"));
    models[name] = {{"architecture", arch},
                    {"file", "model/" + name + ".model"},
                    {"trace", "model/" + name + "_trace.csv"},
                    {"epochs", tc.epochs},
                    {"final_loss", result.trace.back().loss},
                    {"train_rel_err", result.trace.back().train_rel_err},
                    {"param_count", model.param_count()},
                    {"nnz_total", model.nnz_total()}};
  }
  return {{"models", models}};
}

Json cmd_eval(const Context& ctx) {
  const auto specs = model_specs(ctx.cfg);
  for (const auto& s : specs) require_file(ctx.out / "model" / (s.first + ".model"), "train");
  require_file(ctx.out / "data" / "train" / "meta", "dataset");
  require_file(ctx.out / "data" / "test" / "meta", "dataset");
  const auto mesh = load_base_mesh(ctx);
  const Dataset train_set = read_dataset(ctx.out / "data" / "train", mesh);
  const Dataset test_set = read_dataset(ctx.out / "data" / "test", mesh);
  Json models = Json::object();
  std::map<std::string, std::size_t> params;
  for (const auto& [name, arch] : specs) {
    const MinnModel model = load_model(ctx.out / "model" / (name + ".model"));
    const double train_err = relative_l2_error(model, train_set);
    const double test_err = relative_l2_error(model, test_set);
    params[name] = model.param_count();
    models[name] = {{"test_rel_err", test_err},
                    {"train_rel_err", train_err},
                    {"gen_gap", test_err - train_err},
                    {"param_count", model.param_count()},
                    {"nnz_total", model.nnz_total()}};
  }
  Json summary = {{"n_train", train_set.size()}, {"n_test", test_set.size()}, {"models", models}};
  if (params.count("dense"))
    summary["param_ratio"] = static_cast<double>(params["dense"]) / static_cast<double>(params["minn"]);
  write_text(ctx.out / "metrics.json", summary.dump(2) + "\n");
  return summary;
}

Json cmd_uq(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  OxygenConfig oc;
  oc.alpha = cfg.get_double("uq", "alpha", oc.alpha);
  oc.beta = cfg.get_double("uq", "beta", oc.beta);
  oc.eps = cfg.get_double("uq", "eps", oc.eps);
  oc.u_star = cfg.get_double("uq", "u_star", oc.u_star);
  oc.validate();
  NetworkLaw law;
  const auto area = cfg.get_string("uq", "count_area", "pi");
  law.count_area = area == "pi" ? std::numbers::pi : cfg.get_double("uq", "count_area");
  if (!(law.count_area > 0)) throw config_error("[uq] count_area must be positive");
  const auto edges = cfg.get_string("uq", "edges", "all");
  if (edges == "all") law.edges = VoronoiEdges::All;
  else if (edges == "bounded") law.edges = VoronoiEdges::Bounded;
  else throw config_error("[uq] edges must be all or bounded, got '" + edges + "'");
  const auto grid = cfg.get_doubles("uq", "lambda");
  const int reps = positive_int(cfg, "uq", "replicates", 100);
  const auto mesh = load_base_mesh(ctx);
  const auto rows = mc_sweep(grid, reps, oc, mesh, ctx.seed, ctx.threads, law);
  fs::create_directories(ctx.out / "uq");
  write_sweep_csv(rows, ctx.out / "uq" / "sweep.csv");
  write_replicates_csv(rows, ctx.out / "uq" / "replicates.csv");
  Json table = Json::array();
  for (const auto& r : rows) table.push_back({{"lambda", r.lambda}, {"mean_q", r.mean_q}, {"ci99_halfwidth", r.ci99_halfwidth}});
  return {{"sweep", "uq/sweep.csv"}, {"replicates", "uq/replicates.csv"}, {"vertices", mesh->num_vertices()},
          {"n", reps}, {"rows", table}};
}

Json cmd_oracle(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto seg = cfg.get_doubles("oracle", "segment");
  if (seg.size() != 4) throw config_error("[oracle] segment expects x1,y1,x2,y2");
  const auto eps = cfg.get_doubles("oracle", "eps");
  const int pitch = positive_int(cfg, "oracle", "pitch_divisor", 20);
  const VascularNetwork net(std::vector<VascularSegment>{{{seg[0], seg[1]}, {seg[2], seg[3]}}});
  fs::create_directories(ctx.out / "oracle");
  Json tables = Json::object();
  for (const auto& [name, fn] : {std::pair<std::string, std::function<double(Point)>>{"one", [](Point) { return 1.0; }},
                                 std::pair<std::string, std::function<double(Point)>>{"x1", [](Point p) { return p.x; }}}) {
    const auto rows = segment_integral_oracle(net, fn, eps, pitch);
    write_oracle_csv(rows, ctx.out / "oracle" / (name + ".csv"));
    Json t = Json::array();
    for (const auto& r : rows)
      t.push_back({{"eps", r.eps}, {"smoothed", r.smoothed}, {"exact", r.exact}, {"error", r.error}});
    tables[name] = {{"file", "oracle/" + name + ".csv"}, {"rows", t}};
  }
  return {{"segment_length", net.total_length()}, {"tables", tables}};
}

Context make_context(const CliOptions& opt) {
  Context ctx;
  ctx.cfg = Config::load(opt.config);
  ctx.cfg.check(config_schema());
  ctx.id = ctx.cfg.get_string("run", "id", "run");
  const auto seed = ctx.cfg.get_int("run", "seed", 0);
  if (seed < 0) throw config_error("[run] seed must be nonnegative");
  ctx.seed = opt.seed ? *opt.seed : static_cast<std::uint64_t>(seed);
  ctx.out = opt.out ? *opt.out : fs::path(ctx.cfg.get_string("run", "out", "runs/" + ctx.id));
  ctx.threads = opt.threads ? *opt.threads : positive_int(ctx.cfg, "run", "threads", 1);
  if (ctx.threads < 1) throw config_error("--threads must be positive");
  return ctx;
}

}  // namespace

const Config::Schema& config_schema() {
  static const Config::Schema schema{
      {"run", {"id", "seed", "out", "threads"}},
      {"mesh", {"domain", "h", "levels"}},
      {"dataset", {"operator", "n_train", "n_test", "kl_modes", "boundary_spacing", "radii_count", "r_max",
                   "newton_tol", "max_newton"}},
      {"model", {"architecture", "dense_counterpart"}},
      {"train", {"epochs", "optimizer", "lr", "memory", "max_line_search", "armijo_c", "fixed_step",
                 "iterations_per_epoch", "beta1", "beta2", "adam_eps"}},
      {"uq", {"lambda", "replicates", "alpha", "beta", "eps", "u_star", "count_area", "edges"}},
      {"oracle", {"segment", "eps", "pitch_divisor"}},
  };
  return schema;
}

int run(const CliOptions& options, std::ostream& out, std::ostream& err) {
  std::string stage = "config";
  auto report = [&](const std::string& code, const std::string& message) {
    err << Json{{"error", {{"stage", stage}, {"code", code}, {"message", message}}}}.dump() << std::endl;
    return 1;
  };
  try {
    static const std::map<std::string, Json (*)(const Context&)> commands{
        {"mesh", cmd_mesh}, {"dataset", cmd_dataset}, {"train", cmd_train},
        {"eval", cmd_eval}, {"uq", cmd_uq},           {"oracle", cmd_oracle}};
    const auto it = commands.find(options.command);
    if (it == commands.end()) throw config_error("unknown command '" + options.command + "'");
    const Context ctx = make_context(options);
    stage = options.command;
    fs::create_directories(ctx.out);
    Json summary = {{"command", options.command}, {"id", ctx.id}, {"seed", ctx.seed}};
    summary.update(it->second(ctx));
    const std::string text = summary.dump(2) + "\n";
    write_text(ctx.out / (options.command + ".json"), text);
    out << text;
    return 0;
  } catch (const Error& e) {
    return report(std::string(to_string(e.code())), e.detail());
  } catch (const std::exception& e) {
    return report("InternalError", e.what());
  }
}

}  // namespace minn

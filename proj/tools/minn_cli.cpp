#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "minn/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mesh-informed neural networks: meshes, datasets, training, evaluation and oxygenation UQ"};
  minn::CliOptions opt;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  app.add_option("command", opt.command, "mesh | dataset | train | eval | uq | oracle")
      ->required()
      ->check(CLI::IsMember({"mesh", "dataset", "train", "eval", "uq", "oracle"}));
  app.add_option("--config", opt.config, "run config file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "overrides [run] seed");
  auto* out_opt = app.add_option("--out", out, "overrides [run] out");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads for dataset and uq")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    const nlohmann::ordered_json line = {{"error", {{"stage", "cli"}, {"code", "ConfigError"}, {"message", e.what()}}}};
    std::cerr << line.dump() << std::endl;
    return 2;
  }
  if (*seed_opt) opt.seed = seed;
  if (*out_opt) opt.out = out;
  if (*threads_opt) opt.threads = threads;
  return minn::run(opt, std::cout, std::cerr);
}

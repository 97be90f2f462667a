#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "minn/config.hpp"

namespace minn {

struct CliOptions {
  std::string command;  // mesh | dataset | train | eval | uq | oracle
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<int> threads;
};

/// Keys accepted in run configs.
const Config::Schema& config_schema();

/// Runs one pipeline command. On success writes a JSON summary to `out`
/// (and to <out>/<command>.json) and returns 0. On failure writes a single
/// JSON line {"error":{"stage","code","message"}} to `err` and returns 1.
int run(const CliOptions& options, std::ostream& out, std::ostream& err);

}  // namespace minn

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace modsel {

struct RunConfig {
  std::string system;  // file path or built-in name
  std::filesystem::path models;
  std::filesystem::path dataset;
  std::string optimizer = "selector";
  std::size_t budget = 25;
  double gamma = 0.0;
  std::optional<std::string> judge;
  std::uint64_t seed = 0;
  double split = 0.5;
  std::optional<std::filesystem::path> cache_dir;
  std::filesystem::path out;
  std::optional<std::string> start;
  std::size_t workers = 1;
  bool short_circuit = true;
};

/// Manifest paths are resolved against `base_dir`.
RunConfig parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);
/// Everything needed to repeat the run, with absolute paths.
std::string manifest_json(const RunConfig& config);

/// Exit codes: 0 success, 1 configuration error, 2 endpoint failure,
/// 3 assumption check failed.
int cmd_optimize(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Entry point behind the `modsel` binary.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace modsel

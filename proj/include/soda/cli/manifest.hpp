#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace soda::cli {

inline constexpr const char* kToolVersion = "0.1.0";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Relative paths that do not exist are retried under $SODA_DATA_DIR.
std::filesystem::path resolve_input(const std::filesystem::path& path);

struct FileRecord {
  std::string path;
  std::string sha256;
};

// One command invocation. Paths of outputs are stored relative to the run
// directory; inputs are stored as given.
struct RunManifest {
  std::string run_id;
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> configs;  // name -> key/value snapshot
  std::vector<FileRecord> inputs, outputs;
  std::string tool_version = kToolVersion;
  std::string started_at, finished_at;

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& run_dir, const std::filesystem::path& path);
  // Content-derived id: command, seed, config snapshots and input hashes.
  void finalize_id();

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

std::string utc_timestamp();

// run_dir/manifest.json holds one step per command; a step for the same
// command replaces the previous one.
void record_step(const std::filesystem::path& run_dir, const RunManifest& step);
std::vector<RunManifest> read_manifest(const std::filesystem::path& run_dir);

}  // namespace soda::cli

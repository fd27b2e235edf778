#include "soda/cli/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <memory>

#include "soda/error.hpp"

namespace soda::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Digest {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

  Digest() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: digest initialisation failed");
    }
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), data, n) != 1) throw std::runtime_error("sha256: update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) throw std::runtime_error("sha256: final failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[md[i] >> 4]);
      out.push_back(kHex[md[i] & 0xf]);
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for hashing: " + path.string());
  Digest d;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

fs::path resolve_input(const fs::path& path) {
  if (path.empty() || path.is_absolute() || fs::exists(path)) return path;
  if (const char* dir = std::getenv("SODA_DATA_DIR"); dir && *dir) {
    fs::path alt = fs::path(dir) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

void RunManifest::add_input(const fs::path& path) {
  inputs.push_back({path.generic_string(), sha256_file(path)});
}

void RunManifest::add_output(const fs::path& run_dir, const fs::path& path) {
  outputs.push_back({fs::relative(path, run_dir).generic_string(), sha256_file(path)});
}

void RunManifest::finalize_id() {
  std::string key = command + "\n" + std::to_string(seed) + "\n" + tool_version + "\n";
  for (const auto& [name, text] : configs) key += name + "\n" + text + "\n";
  for (const auto& f : inputs) key += f.sha256 + "\n";
  run_id = sha256_hex(key).substr(0, 16);
}

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["run_id"] = run_id;
  j["command"] = command;
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["configs"] = ordered_json::object();
  for (const auto& [name, text] : configs) j["configs"][name] = text;
  auto files = [](const std::vector<FileRecord>& v) {
    ordered_json a = ordered_json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return a;
  };
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.command = j.at("command").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  for (const auto& [name, text] : j.at("configs").items()) m.configs[name] = text.get<std::string>();
  for (const auto& f : j.at("inputs")) m.inputs.push_back({f.at("path"), f.at("sha256")});
  for (const auto& f : j.at("outputs")) m.outputs.push_back({f.at("path"), f.at("sha256")});
  return m;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<RunManifest> read_manifest(const fs::path& run_dir) {
  std::vector<RunManifest> steps;
  const fs::path path = run_dir / "manifest.json";
  if (!fs::exists(path)) return steps;
  std::ifstream in(path);
  try {
    json j = json::parse(in);
    for (const auto& s : j.at("steps")) steps.push_back(RunManifest::from_json(s));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return steps;
}

void record_step(const fs::path& run_dir, const RunManifest& step) {
  auto steps = read_manifest(run_dir);
  std::erase_if(steps, [&](const RunManifest& s) { return s.command == step.command; });
  steps.push_back(step);
  ordered_json j;
  j["format"] = "soda-run-manifest";
  j["tool_version"] = kToolVersion;
  j["steps"] = ordered_json::array();
  for (const auto& s : steps) j["steps"].push_back(s.to_json());
  const fs::path path = run_dir / "manifest.json";
  const fs::path tmp = run_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write manifest: " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

}  // namespace soda::cli

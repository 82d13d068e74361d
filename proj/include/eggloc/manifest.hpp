#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "eggloc/errors.hpp"
#include "eggloc/version.hpp"

namespace eggloc {

// Every CLI command writes one of these next to its outputs: the fully
// resolved configuration needed to re-run the command identically. The
// timestamp is the only field that varies between identical runs.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();  // resolved flag/config snapshot
  nlohmann::json inputs = nlohmann::json::object();  // input paths by role
  nlohmann::json outputs = nlohmann::json::object(); // output paths by role
  std::uint64_t seed = 0;
  std::string tool_version = kVersion;
  std::string timestamp;  // ISO-8601 UTC
};

inline std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_manifest(const std::filesystem::path& path, RunManifest manifest) {
  if (manifest.timestamp.empty()) manifest.timestamp = utc_timestamp_now();
  nlohmann::json j = {{"command", manifest.command},
                      {"config", manifest.config},
                      {"inputs", manifest.inputs},
                      {"outputs", manifest.outputs},
                      {"seed", manifest.seed},
                      {"tool_version", manifest.tool_version},
                      {"timestamp", manifest.timestamp}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace eggloc

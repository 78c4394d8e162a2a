#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace crowdcal {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ArtifactEntry {
  std::string file;  // relative to the run directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string subcommand;
  std::string config_hash;
  std::vector<ArtifactEntry> artifacts;
  std::string status = "incomplete";  // "complete" once every artifact is written
  std::string error;
  double elapsed_seconds = 0.0;
  std::string version;
};

// One directory per invocation. The directory must not hold a manifest yet;
// files are never overwritten. Every file goes through write(), which
// records its digest, and the manifest is written last.
class RunDirectory {
 public:
  RunDirectory(std::filesystem::path root, std::string subcommand, std::string config_hash);

  const std::filesystem::path& root() const { return root_; }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body);

  // Writes manifest.json with the given status and returns the manifest.
  RunManifest finish(bool complete, const std::string& error = {});

  const RunManifest& manifest() const { return manifest_; }

 private:
  std::filesystem::path root_;
  RunManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace crowdcal

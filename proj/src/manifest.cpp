#include "crowdcal/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "crowdcal/error.hpp"

namespace crowdcal {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

RunDirectory::RunDirectory(std::filesystem::path root, std::string subcommand,
                           std::string config_hash)
    : root_(std::move(root)), start_(std::chrono::steady_clock::now()) {
  std::filesystem::create_directories(root_);
  if (std::filesystem::exists(root_ / "manifest.json")) {
    throw ConfigError("run directory " + root_.string() +
                      " already holds a manifest; use a fresh --out");
  }
  manifest_.subcommand = std::move(subcommand);
  manifest_.config_hash = std::move(config_hash);
  manifest_.version = CROWDCAL_VERSION;
}

void RunDirectory::write(const std::string& name, const std::function<void(std::ostream&)>& body) {
  const auto path = root_ / name;
  if (std::filesystem::exists(path)) throw Error("refusing to overwrite " + path.string());
  std::filesystem::create_directories(path.parent_path());
  std::ostringstream buffer;
  body(buffer);
  const std::string bytes = buffer.str();
  std::ofstream out(path, std::ios::binary);
  out << bytes;
  if (!out) throw Error("failed writing " + path.string());
  manifest_.artifacts.push_back({name, sha256_hex(bytes), bytes.size()});
}

RunManifest RunDirectory::finish(bool complete, const std::string& error) {
  manifest_.status = complete ? "complete" : "incomplete";
  manifest_.error = error;
  manifest_.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  nlohmann::ordered_json j;
  j["subcommand"] = manifest_.subcommand;
  j["status"] = manifest_.status;
  if (!error.empty()) j["error"] = error;
  j["config_hash"] = manifest_.config_hash;
  j["version"] = manifest_.version;
  j["elapsed_seconds"] = manifest_.elapsed_seconds;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : manifest_.artifacts) {
    j["artifacts"].push_back({{"file", a.file}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  }
  std::ofstream out(root_ / "manifest.json");
  out << j.dump(2) << '\n';
  return manifest_;
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  const auto j = nlohmann::json::parse(in);
  RunManifest m;
  m.subcommand = j.at("subcommand");
  m.status = j.at("status");
  m.config_hash = j.at("config_hash");
  m.version = j.value("version", "");
  m.elapsed_seconds = j.value("elapsed_seconds", 0.0);
  m.error = j.value("error", "");
  for (const auto& a : j.at("artifacts")) {
    m.artifacts.push_back({a.at("file"), a.at("sha256"), a.at("bytes")});
  }
  return m;
}

}  // namespace crowdcal

#include "xrecap/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "xrecap/common.hpp"

#ifndef XRECAP_VERSION
#define XRECAP_VERSION "0.0.0"
#endif

namespace xrecap {

namespace {

std::string hex(const unsigned char* data, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(n * 2);
  for (unsigned int i = 0; i < n; ++i) {
    out.push_back(digits[data[i] >> 4]);
    out.push_back(digits[data[i] & 0xf]);
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorClass::io, "SHA-256 initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) {
    EVP_DigestUpdate(ctx_, data, n);
  }
  std::string hex_digest() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_, md, &n);
    return hex(md, n);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex_digest();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex_digest();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorClass::io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorClass::io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string tool_version() { return XRECAP_VERSION; }

RunManifest::RunManifest(std::string command, std::filesystem::path base)
    : command_(std::move(command)), base_(std::move(base)) {}

void RunManifest::set_config(std::string_view canonical_config) {
  config_sha256_ = sha256_hex(canonical_config);
}

void RunManifest::set_seed(const std::string& name, std::uint64_t seed) {
  seeds_[name] = seed;
}

std::string RunManifest::key(const std::filesystem::path& path) const {
  const auto abs = std::filesystem::absolute(path).lexically_normal();
  const auto base = std::filesystem::absolute(base_).lexically_normal();
  const auto rel = abs.lexically_relative(base);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs.generic_string();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs_[key(path)] = sha256_file(path);
}

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs_[key(path)] = sha256_file(path);
}

void RunManifest::add_log(const std::filesystem::path& path) {
  logs_[key(path)] = sha256_file(path);
}

void RunManifest::add_timing(const std::string& stage, double ms) {
  timings_.emplace_back(stage, ms);
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["tool"] = "xrecap";
  j["version"] = tool_version();
  j["command"] = command_;
  j["base"] = std::filesystem::absolute(base_).lexically_normal().generic_string();
  j["config_sha256"] = config_sha256_;
  j["seeds"] = seeds_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  j["logs"] = logs_;
  nlohmann::ordered_json t = nlohmann::ordered_json::object();
  for (const auto& [stage, ms] : timings_) t[stage] = ms;
  j["timings_ms"] = t;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json());
}

std::vector<std::string> verify_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::parse, path.string() + ": " + e.what());
  }
  const std::filesystem::path base = j.value("base", std::string());
  std::vector<std::string> problems;
  for (const char* section : {"inputs", "outputs", "logs"}) {
    if (!j.contains(section)) continue;
    for (const auto& [name, digest] : j[section].items()) {
      std::filesystem::path p(name);
      if (p.is_relative()) p = base / p;
      if (!std::filesystem::exists(p)) {
        problems.push_back(std::string(section) + " " + name + ": missing");
        continue;
      }
      if (sha256_file(p) != digest.get<std::string>()) {
        problems.push_back(std::string(section) + " " + name + ": digest mismatch");
      }
    }
  }
  return problems;
}

}  // namespace xrecap

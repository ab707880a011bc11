#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xrecap {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

std::string tool_version();

// Record of one mutating command. File paths are stored relative to `base`
// when they live under it.
class RunManifest {
 public:
  RunManifest(std::string command, std::filesystem::path base);

  void set_config(std::string_view canonical_config);
  void set_seed(const std::string& name, std::uint64_t seed);
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  // Outputs whose content varies between runs (timings), digested but
  // excluded from deterministic comparisons.
  void add_log(const std::filesystem::path& path);
  void add_timing(const std::string& stage, double ms);

  const std::map<std::string, std::string>& outputs() const { return outputs_; }
  std::string to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string key(const std::filesystem::path& path) const;

  std::string command_;
  std::filesystem::path base_;
  std::string config_sha256_;
  std::map<std::string, std::uint64_t> seeds_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  std::map<std::string, std::string> logs_;
  std::vector<std::pair<std::string, double>> timings_;
};

// Re-hashes every input and output listed in a manifest; returns one line
// per missing or changed file.
std::vector<std::string> verify_manifest(const std::filesystem::path& path);

}  // namespace xrecap

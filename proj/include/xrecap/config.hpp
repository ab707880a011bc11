#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xrecap/corpus.hpp"
#include "xrecap/recaption.hpp"
#include "xrecap/refsel.hpp"
#include "xrecap/termlens.hpp"
#include "xrecap/trainer.hpp"

namespace xrecap {

enum class LlmBackend { http, echo };
enum class MtBackend { http, identity };

struct EndpointConfig {
  HttpEndpoint http;
  // Environment variable holding the auth header value; overrides
  // http.auth_value when set.
  std::string auth_env;
};

struct PathsConfig {
  std::filesystem::path images;
  std::vector<std::filesystem::path> captions;
  std::filesystem::path image_embeddings;
  std::vector<std::filesystem::path> text_embeddings;
  std::filesystem::path taxonomy_edges;
  std::filesystem::path taxonomy_lemmas;
  std::filesystem::path supercategories;
  std::filesystem::path aliases;
  std::filesystem::path pretagged;
};

struct TermsConfig {
  NounMode mode = NounMode::lexicon;
  std::size_t min_count = 150;
  std::size_t union_threshold = 150;
};

struct PipelineConfig {
  std::filesystem::path output_dir = "run";
  std::uint64_t seed = 7;
  PathsConfig paths;
  LanguageTag source_lang{"en"};
  LanguageTag target_lang{"ja"};

  bool synthetic = false;
  SyntheticSpec synth;

  double ref_fraction = 0.1;
  double train_fraction = 0.6;
  std::uint64_t split_seed = 7;

  RefSelConfig refsel;

  LlmBackend llm_backend = LlmBackend::http;
  EndpointConfig llm;
  GenerationParams generation;
  MtBackend mt_backend = MtBackend::http;
  EndpointConfig mt;
  TranslationParams translation;

  std::vector<RewriteStrategy> strategies{RewriteStrategy::targeted_recaption};
  double failure_threshold = 0.05;
  std::size_t concurrency = 4;
  bool retry_on_parse_failure = false;
  std::size_t audit_sample = 200;

  TrainConfig train;
  // Models trained and evaluated by `pipeline all`.
  std::vector<std::string> variants{"untrained", "mt", "aug", "native"};
  std::size_t max_gold_sets = 5;

  TermsConfig terms;

  // Canonical JSON of every effective setting; hashed into manifests.
  std::string canonical_json() const;
  // Collects every problem, then throws ConfigError.
  void validate() const;
};

// Parses TOML; relative paths resolve against `base_dir`. Unknown keys and
// type mismatches are all reported together.
PipelineConfig parse_config(std::string_view toml_text,
                            const std::filesystem::path& base_dir,
                            std::string_view source_name = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);

// Applies auth_env overrides for both endpoints.
void apply_env_overrides(PipelineConfig& config);

std::string_view to_string(LlmBackend b);
std::string_view to_string(MtBackend b);

}  // namespace xrecap

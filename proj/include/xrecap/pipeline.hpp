#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xrecap/config.hpp"
#include "xrecap/eval.hpp"
#include "xrecap/recaption.hpp"
#include "xrecap/trainer.hpp"

namespace xrecap {

// Fixed file layout under the run's output directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path images() const { return root / "data" / "images.jsonl"; }
  std::filesystem::path captions() const { return root / "data" / "captions.jsonl"; }
  std::filesystem::path image_embeddings() const {
    return root / "data" / "image_embeddings.emb";
  }
  std::filesystem::path text_embeddings() const {
    return root / "data" / "text_embeddings.emb";
  }
  std::filesystem::path split() const { return root / "split.json"; }
  std::filesystem::path guidance() const { return root / "guidance.jsonl"; }
  std::filesystem::path rewrites(RewriteStrategy s) const;
  std::filesystem::path recap_failures(RewriteStrategy s) const;
  std::filesystem::path audit_sample(RewriteStrategy s) const;
  std::filesystem::path guidance_translations() const {
    return root / "recap" / "guidance_translations.json";
  }
  std::filesystem::path translated() const {
    return root / "translate" / "translated.jsonl";
  }
  std::filesystem::path translate_failures() const {
    return root / "translate" / "failures.jsonl";
  }
  std::filesystem::path checkpoint(const std::string& variant) const {
    return root / "train" / variant / "head.xrc";
  }
  std::filesystem::path train_log(const std::string& variant) const {
    return root / "train" / variant / "log.csv";
  }
  std::filesystem::path eval_dir(const std::string& variant) const {
    return root / "eval" / variant;
  }
  std::filesystem::path errorset_dir() const { return root / "eval" / "errorsets"; }
  std::filesystem::path manifest(const std::string& stage) const {
    return root / "manifests" / (stage + ".json");
  }
  std::filesystem::path events() const { return root / "events.jsonl"; }
};

// Appends JSONL events; each line carries the elapsed milliseconds since
// the log was opened.
class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(const std::filesystem::path& path);

  void emit(const std::string& event, const std::string& stage,
            const std::string& json_fields = "{}");

 private:
  std::unique_ptr<std::ofstream> out_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct PipelineOptions {
  std::ostream* summary = nullptr;  // human-readable lines; nullptr = quiet
  std::shared_ptr<ChatClient> chat;  // overrides the configured backend
  std::shared_ptr<TranslationClient> translator;
};

struct VariantEval {
  std::string variant;
  std::vector<RetrievalReport> per_set;
  RetrievalReport mean;
};

struct ErrorSetSummary {
  ErrorSet i2t;
  ErrorSet t2i;
  std::map<std::string, std::optional<RetrievalReport>> restricted;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, PipelineOptions options = {});

  const PipelineConfig& config() const { return config_; }
  const Workspace& workspace() const { return ws_; }

  void corpus_synth();
  void corpus_ingest();
  CorpusSplit split_make();
  std::vector<GuidanceAssignment> refsel_assign();
  // Empty `strategies` means the configured list.
  void recap_run(std::vector<RewriteStrategy> strategies = {});
  void translate_run();
  TrainResult train_run(const std::string& variant,
                        std::vector<RewriteStrategy> strategies = {});
  VariantEval eval_retrieve(const std::string& variant);
  ErrorSetSummary eval_errorset(const std::string& native_variant = "native",
                                const std::string& mt_variant = "mt");
  // Every stage in order, then a pipeline manifest over all outputs.
  void run_all();

  // Training pools for a variant: "mt", "aug" or "native".
  std::vector<TrainingExample> training_examples(
      const std::string& variant, std::vector<RewriteStrategy> strategies = {}) const;

 private:
  struct Stage;

  std::vector<CaptionRecord> load_all_captions() const;
  EmbeddingStore load_text_store() const;
  EmbeddingStore load_image_store() const;
  CorpusSplit load_split() const;
  ChatClient& chat();
  TranslationClient& translator();
  void say(const std::string& line) const;
  std::vector<std::vector<CaptionRecord>> gold_sets(
      const std::vector<CaptionRecord>& captions, const CorpusSplit& split) const;
  std::pair<std::vector<RankingResult>, std::vector<RankingResult>> rank_set(
      const ProjectionHead& head, const std::vector<CaptionRecord>& gold,
      const EmbeddingStore& images, const EmbeddingStore& texts) const;

  PipelineConfig config_;
  PipelineOptions options_;
  Workspace ws_;
  EventLog events_;
  RecaptionSession session_;
  std::vector<std::filesystem::path> deterministic_outputs_;
  std::vector<std::pair<std::string, double>> timings_;
};

struct RougeSummary {
  std::map<std::string, double> mean_f1;  // by variant name
  std::size_t pairs = 0;
};

// Each candidate is scored against the references of its image (best F1
// over references); scores are averaged over candidates.
RougeSummary rouge_corpus(std::span<const CaptionRecord> candidates,
                          std::span<const CaptionRecord> references);
std::string rouge_summary_json(const RougeSummary& summary);

}  // namespace xrecap

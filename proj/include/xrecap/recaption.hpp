#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xrecap/common.hpp"
#include "xrecap/corpus.hpp"
#include "xrecap/refsel.hpp"

namespace xrecap {

enum class RewriteStrategy { paraphrase, diverse_recaption, targeted_recaption };

// Short names "paraphrase", "diverse", "targeted"; these also form the
// rewrite caption id suffix.
std::string_view to_string(RewriteStrategy s);
RewriteStrategy rewrite_strategy_from_string(std::string_view name);
CaptionSource caption_source_of(RewriteStrategy s);
bool uses_image(RewriteStrategy s);

// The raw template with {input} (and {reference_examples}) placeholders.
std::string_view prompt_template(RewriteStrategy s);

// "Input: <src>\nOutput: <tgt>" from the guidance captions.
std::string render_reference_block(const GuidanceExample& guidance);

// Guidance must be given for the targeted strategy and only for it.
std::string render_prompt(RewriteStrategy strategy, std::string_view input,
                          const GuidanceExample* guidance = nullptr);

// Trimmed text between the first <final> and the next </final>.
std::string parse_final(std::string_view raw);
std::string wrap_final(std::string_view text);

struct GenerationParams {
  double temperature = 0.0;
  std::uint64_t seed = 42;
  int max_tokens = 448;

  void validate() const;
};

enum class Decoding { greedy };
std::string_view to_string(Decoding d);

struct TranslationParams {
  int max_tokens = 200;
  Decoding decoding = Decoding::greedy;

  void validate() const;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the first message content. Implementations must be safe to
  // call from several threads.
  virtual std::string complete(const std::string& prompt,
                               const std::optional<std::string>& image_uri,
                               const GenerationParams& params) = 0;
};

class TranslationClient {
 public:
  virtual ~TranslationClient() = default;
  virtual std::string translate(const std::string& text,
                                const LanguageTag& source_lang,
                                const LanguageTag& target_lang,
                                const TranslationParams& params) = 0;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::milliseconds max_backoff{4000};

  // Delay before attempt `attempt` + 1 (attempt counts from 1).
  std::chrono::milliseconds backoff(int attempt) const;
};

enum class ImageTransport { uri, inline_base64 };
std::string_view to_string(ImageTransport t);
ImageTransport image_transport_from_string(std::string_view name);

struct HttpEndpoint {
  std::string base_url;  // scheme://host[:port]
  std::string path;
  std::string model;
  std::string auth_header = "Authorization";
  std::string auth_value;
  double timeout_seconds = 120.0;
  RetryPolicy retry;
  ImageTransport image_transport = ImageTransport::uri;
};

// JSON request bodies, exposed for inspection.
std::string chat_request_body(const std::string& model,
                              const std::string& prompt,
                              const std::optional<std::string>& image_url,
                              const GenerationParams& params);
std::string translation_request_body(const std::string& text,
                                     const LanguageTag& source_lang,
                                     const LanguageTag& target_lang,
                                     const TranslationParams& params);

// "data:<mime>;base64,<bytes>" for a local file path or file:// URI.
std::string inline_image_data_url(const std::string& uri);

// Posts `body` with retries on transport errors, 429 and 5xx. Throws
// RequestError carrying the number of attempts made.
std::string post_json(const HttpEndpoint& endpoint, const std::string& body);

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpEndpoint endpoint);
  std::string complete(const std::string& prompt,
                       const std::optional<std::string>& image_uri,
                       const GenerationParams& params) override;

 private:
  HttpEndpoint endpoint_;
};

class HttpTranslationClient : public TranslationClient {
 public:
  explicit HttpTranslationClient(HttpEndpoint endpoint);
  std::string translate(const std::string& text, const LanguageTag& source_lang,
                        const LanguageTag& target_lang,
                        const TranslationParams& params) override;

 private:
  HttpEndpoint endpoint_;
};

// Offline stand-in: answers with the reference output when the prompt has a
// reference block, otherwise with the input caption, wrapped in final tags.
class EchoChatClient : public ChatClient {
 public:
  std::string complete(const std::string& prompt,
                       const std::optional<std::string>& image_uri,
                       const GenerationParams& params) override;
};

class IdentityTranslationClient : public TranslationClient {
 public:
  std::string translate(const std::string& text, const LanguageTag& source_lang,
                        const LanguageTag& target_lang,
                        const TranslationParams& params) override;
};

struct RewriteResult {
  std::string train_caption_id;
  RewriteStrategy strategy = RewriteStrategy::paraphrase;
  std::string raw_output;
  std::string extracted_text;
  std::optional<GuidanceExample> guidance;
};

struct RewriteFailure {
  std::string caption_id;
  std::string stage;  // strategy name, or "translate"
  ErrorClass error_class = ErrorClass::parse;
  int attempts = 0;
  std::string message;
};

struct RewriteOptions {
  GenerationParams params;
  double failure_threshold = 0.05;
  std::size_t concurrency = 1;
  bool retry_on_parse_failure = false;
};

struct RewriteSet {
  std::vector<RewriteResult> results;
  std::vector<RewriteFailure> failures;
};

// Rewrites every caption in input order. `guidance` is keyed by image id
// and required for every caption under the targeted strategy; `image_uris`
// supplies attachments for the image-conditioned strategies. Throws
// aborted when failures exceed the threshold fraction of inputs.
RewriteSet build_rewrite_set(
    std::span<const CaptionRecord> captions, RewriteStrategy strategy,
    const std::map<std::string, GuidanceExample>& guidance,
    const std::map<std::string, std::string>& image_uris, ChatClient& client,
    const RewriteOptions& options);

// Translations of guidance output captions into the prompt language, keyed
// by caption_id so each is requested once.
class TranslationCache {
 public:
  const std::string* find(const std::string& caption_id) const;
  void put(const std::string& caption_id, std::string text);
  std::size_t size() const { return entries_.size(); }

  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> entries_;
};

// Replaces each guidance output caption's text with its translation into
// `prompt_lang`, consulting and filling `cache`.
void translate_guidance(std::map<std::string, GuidanceExample>& guidance,
                        const LanguageTag& prompt_lang,
                        TranslationClient& client,
                        const TranslationParams& params,
                        TranslationCache& cache);

struct TranslationJob {
  std::string caption_id;  // id of the translated caption
  std::string image_id;
  std::string text;
  CaptionSource source = CaptionSource::machine_translated;
};

struct TranslationBatch {
  std::vector<CaptionRecord> captions;
  std::vector<RewriteFailure> failures;
};

// One request per job, results in input order.
TranslationBatch translate_batch(std::span<const TranslationJob> jobs,
                                 const LanguageTag& source_lang,
                                 const LanguageTag& target_lang,
                                 TranslationClient& client,
                                 const TranslationParams& params,
                                 std::size_t concurrency,
                                 double failure_threshold);

// "<caption_id>@<strategy>" and "<caption_id>@mt".
std::string rewrite_caption_id(std::string_view caption_id,
                               RewriteStrategy strategy);
std::string mt_caption_id(std::string_view caption_id);

// Jobs translating the source captions themselves.
std::vector<TranslationJob> mt_jobs(std::span<const CaptionRecord> captions);
// Jobs translating rewrites; the caption's image is looked up in `captions`.
std::vector<TranslationJob> rewrite_jobs(
    std::span<const RewriteResult> results,
    std::span<const CaptionRecord> captions);

// Enforces recaption-then-translate order within one run.
class RecaptionSession {
 public:
  void record_rewrites(const RewriteSet& set);
  bool has_rewrites() const { return recaptioned_; }
  TranslationBatch translate_rewrites(std::span<const CaptionRecord> captions,
                                      const LanguageTag& source_lang,
                                      const LanguageTag& target_lang,
                                      TranslationClient& client,
                                      const TranslationParams& params,
                                      std::size_t concurrency,
                                      double failure_threshold) const;

 private:
  bool recaptioned_ = false;
  std::vector<RewriteResult> results_;
};

std::string rewrite_to_json_line(const RewriteResult& r);
RewriteResult rewrite_from_json_line(std::string_view line,
                                     std::span<const CaptionRecord> captions);
void write_rewrites(const std::filesystem::path& path,
                    std::span<const RewriteResult> results);
std::vector<RewriteResult> read_rewrites(const std::filesystem::path& path,
                                         std::span<const CaptionRecord> captions);
std::string failure_to_json_line(const RewriteFailure& f);
void write_failures(const std::filesystem::path& path,
                    std::span<const RewriteFailure> failures);

// A uniform sample (without replacement, input order kept) for manual review.
std::vector<RewriteResult> sample_for_audit(std::span<const RewriteResult> results,
                                            std::size_t n, std::uint64_t seed);

}  // namespace xrecap

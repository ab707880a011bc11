#include "xrecap/recaption.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include <nlohmann/json.hpp>

namespace xrecap {

namespace {

constexpr std::string_view kParaphraseTemplate =
    "Task: The objective is to paraphrase an English caption to reflect "
    "diversity in how speakers around the world describe objects, especially "
    "across languages. It is very important to strictly follow the listed "
    "requirements.\n"
    "\n"
    "Requirements:\n"
    "- Output only a single paraphrased caption which must start with <final> "
    "and end with </final>.\n"
    "- Example: <final> There is a blue bicycle and red motorcycle on the "
    "street. </final>\n"
    "- Do not output any additional quotes, text, comments, explanations, or "
    "details. Just the caption.\n"
    "\n"
    "Please complete this example:\n"
    "Input: {input}\n"
    "Output: ";

constexpr std::string_view kDiverseTemplate =
    "Task Description: For an input image and an input caption, produce a "
    "one-sentence image caption that differs significantly from the input "
    "caption in order of phrases, sentence structure, semantic content, which "
    "objects are described, and/or level of detail. Make sure the output "
    "differs from the input caption and use the image for guidance. Only "
    "perform changes that are correct and semantically relevant to the given "
    "input image. After \"Output: \", always output a <final> tag, followed by "
    "a rewritten caption, then </final>. Never any other text or explanation. "
    "One task demo for formatting and change instruction is provided.\n"
    "\n"
    "Task Demo:\n"
    "Inference\n"
    "Input: A young boy holding a baseball bat during a baseball game.\n"
    "Output: <final> The batter in the grey uniform is waiting for a ball "
    "during a game. </final>\n"
    "\n"
    "Now perform the task exactly as above:\n"
    "Inference\n"
    "Input: {input}\n"
    "Output: ";

constexpr std::string_view kTargetedTemplate =
    "Task Description: For an input image, image caption, and reference "
    "input-output caption(s) for similar image(s), rewrite the image caption "
    "with similar changes to the style, level of detail, and object terms as "
    "in the reference examples. Only perform changes that are correct and "
    "semantically relevant to the given input image. After \"Output: \", "
    "always output a <final> tag, followed by a rewritten caption, then "
    "</final>. Never any other text or explanation. One task demo for "
    "formatting and change instruction is provided.\n"
    "\n"
    "Task Demo:\n"
    "Reference example(s)\n"
    "Input: A catcher catching a ball that has just gone by the hitter.\n"
    "Output: The batter in the orange uniform just missed the ball.\n"
    "Inference\n"
    "Input: A young boy holding a baseball bat during a baseball game.\n"
    "Output: <final> The batter in the grey uniform is waiting for a ball "
    "during a game. </final>\n"
    "\n"
    "Now perform the task exactly as above:\n"
    "Reference example(s)\n"
    "{reference_examples}\n"
    "\n"
    "Inference\n"
    "Input: {input}\n"
    "Output: ";

constexpr std::string_view kFormatReminder =
    "\n\nReminder: reply with exactly one caption wrapped as "
    "<final> caption </final>.";

// Substitutes placeholders found in the template only, so caption text that
// happens to contain a placeholder is left alone.
std::string substitute(std::string_view tmpl,
                       const std::map<std::string_view, std::string_view>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) break;
    auto it = values.find(tmpl.substr(open + 1, close - open - 1));
    if (it == values.end()) {
      out.append(tmpl.substr(pos, open + 1 - pos));
      pos = open + 1;
      continue;
    }
    out.append(tmpl.substr(pos, open - pos));
    out.append(it->second);
    pos = close + 1;
  }
  out.append(tmpl.substr(pos));
  return out;
}

}  // namespace

std::string_view to_string(RewriteStrategy s) {
  switch (s) {
    case RewriteStrategy::paraphrase: return "paraphrase";
    case RewriteStrategy::diverse_recaption: return "diverse";
    case RewriteStrategy::targeted_recaption: return "targeted";
  }
  return "?";
}

RewriteStrategy rewrite_strategy_from_string(std::string_view name) {
  if (name == "paraphrase") return RewriteStrategy::paraphrase;
  if (name == "diverse" || name == "diverse_recaption") {
    return RewriteStrategy::diverse_recaption;
  }
  if (name == "targeted" || name == "targeted_recaption") {
    return RewriteStrategy::targeted_recaption;
  }
  throw Error(ErrorClass::validation,
              "unknown rewrite strategy '" + std::string(name) +
                  "' (expected paraphrase, diverse or targeted)");
}

CaptionSource caption_source_of(RewriteStrategy s) {
  switch (s) {
    case RewriteStrategy::paraphrase: return CaptionSource::rewrite_paraphrase;
    case RewriteStrategy::diverse_recaption: return CaptionSource::rewrite_diverse;
    case RewriteStrategy::targeted_recaption: return CaptionSource::rewrite_targeted;
  }
  return CaptionSource::rewrite_paraphrase;
}

bool uses_image(RewriteStrategy s) { return s != RewriteStrategy::paraphrase; }

std::string_view prompt_template(RewriteStrategy s) {
  switch (s) {
    case RewriteStrategy::paraphrase: return kParaphraseTemplate;
    case RewriteStrategy::diverse_recaption: return kDiverseTemplate;
    case RewriteStrategy::targeted_recaption: return kTargetedTemplate;
  }
  return {};
}

std::string render_reference_block(const GuidanceExample& guidance) {
  return "Input: " + guidance.input_caption.text +
         "\nOutput: " + guidance.output_caption.text;
}

std::string render_prompt(RewriteStrategy strategy, std::string_view input,
                          const GuidanceExample* guidance) {
  const bool targeted = strategy == RewriteStrategy::targeted_recaption;
  if (targeted && guidance == nullptr) {
    throw Error(ErrorClass::validation,
                "targeted recaptioning requires a guidance example");
  }
  if (!targeted && guidance != nullptr) {
    throw Error(ErrorClass::validation,
                std::string(to_string(strategy)) +
                    " strategy does not take a guidance example");
  }
  std::map<std::string_view, std::string_view> values{{"input", input}};
  std::string block;
  if (targeted) {
    block = render_reference_block(*guidance);
    values.emplace("reference_examples", block);
  }
  return substitute(prompt_template(strategy), values);
}

std::string parse_final(std::string_view raw) {
  constexpr std::string_view open = "<final>";
  constexpr std::string_view close = "</final>";
  const auto start = raw.find(open);
  if (start == std::string_view::npos) {
    throw Error(ErrorClass::parse, "missing final tag");
  }
  const auto body = start + open.size();
  const auto end = raw.find(close, body);
  if (end == std::string_view::npos) {
    throw Error(ErrorClass::parse, "missing closing final tag");
  }
  std::string text = trim(raw.substr(body, end - body));
  if (text.empty()) throw Error(ErrorClass::parse, "empty final caption");
  return text;
}

std::string wrap_final(std::string_view text) {
  return "<final> " + std::string(text) + " </final>";
}

void GenerationParams::validate() const {
  std::vector<std::string> problems;
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    problems.push_back("generation.temperature must be finite and >= 0");
  }
  if (max_tokens < 1) problems.push_back("generation.max_tokens must be >= 1");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string_view to_string(Decoding) { return "greedy"; }

void TranslationParams::validate() const {
  if (max_tokens < 1) {
    throw ConfigError({"translation.max_tokens must be >= 1"});
  }
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  auto delay = initial_backoff;
  for (int i = 1; i < attempt && delay < max_backoff; ++i) delay *= 2;
  return std::min(delay, max_backoff);
}

std::string_view to_string(ImageTransport t) {
  return t == ImageTransport::uri ? "uri" : "inline_base64";
}

ImageTransport image_transport_from_string(std::string_view name) {
  if (name == "uri") return ImageTransport::uri;
  if (name == "inline_base64" || name == "inline") {
    return ImageTransport::inline_base64;
  }
  throw Error(ErrorClass::validation,
              "unknown image transport '" + std::string(name) + "'");
}

std::string chat_request_body(const std::string& model,
                              const std::string& prompt,
                              const std::optional<std::string>& image_url,
                              const GenerationParams& params) {
  nlohmann::ordered_json content = nlohmann::ordered_json::array();
  content.push_back({{"type", "text"}, {"text", prompt}});
  if (image_url) {
    content.push_back(
        {{"type", "image_url"}, {"image_url", {{"url", *image_url}}}});
  }
  nlohmann::ordered_json body;
  body["model"] = model;
  body["messages"] = nlohmann::ordered_json::array(
      {{{"role", "user"}, {"content", content}}});
  body["temperature"] = params.temperature;
  body["seed"] = params.seed;
  body["max_tokens"] = params.max_tokens;
  return body.dump();
}

std::string translation_request_body(const std::string& text,
                                     const LanguageTag& source_lang,
                                     const LanguageTag& target_lang,
                                     const TranslationParams& params) {
  nlohmann::ordered_json body;
  body["text"] = text;
  body["source_lang"] = source_lang.code();
  body["target_lang"] = target_lang.code();
  body["max_tokens"] = params.max_tokens;
  body["decoding"] = to_string(params.decoding);
  return body.dump();
}

std::string inline_image_data_url(const std::string& uri) {
  std::string path = uri;
  if (path.rfind("file://", 0) == 0) path = path.substr(7);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorClass::io, "cannot read image " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::string mime = "application/octet-stream";
  if (ext == ".jpg" || ext == ".jpeg") mime = "image/jpeg";
  if (ext == ".png") mime = "image/png";
  if (ext == ".webp") mime = "image/webp";
  if (ext == ".gif") mime = "image/gif";
  std::string encoded(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(encoded.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  encoded.resize(static_cast<std::size_t>(n));
  return "data:" + mime + ";base64," + encoded;
}

std::string post_json(const HttpEndpoint& endpoint, const std::string& body) {
  const int max_attempts = std::max(1, endpoint.retry.max_attempts);
  std::string last_error;
  ErrorClass last_class = ErrorClass::transport;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    httplib::Client client(endpoint.base_url);
    const auto secs = static_cast<time_t>(endpoint.timeout_seconds);
    const auto usecs = static_cast<time_t>(
        (endpoint.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!endpoint.auth_value.empty()) {
      headers.emplace(endpoint.auth_header, endpoint.auth_value);
    }
    auto res = client.Post(endpoint.path, headers, body, "application/json");
    bool retryable = false;
    if (!res) {
      last_class = ErrorClass::transport;
      last_error = "transport failure: " + httplib::to_string(res.error());
      retryable = true;
    } else if (res->status >= 200 && res->status < 300) {
      return res->body;
    } else {
      last_class = ErrorClass::http_status;
      last_error = "HTTP status " + std::to_string(res->status);
      retryable = res->status == 429 || res->status >= 500;
    }
    if (!retryable) throw RequestError(last_class, last_error, attempt);
    if (attempt < max_attempts) {
      std::this_thread::sleep_for(endpoint.retry.backoff(attempt));
    }
  }
  throw RequestError(last_class,
                     last_error + " after " + std::to_string(max_attempts) +
                         " attempts",
                     max_attempts);
}

HttpChatClient::HttpChatClient(HttpEndpoint endpoint)
    : endpoint_(std::move(endpoint)) {
  if (endpoint_.path.empty()) endpoint_.path = "/v1/chat/completions";
}

std::string HttpChatClient::complete(const std::string& prompt,
                                     const std::optional<std::string>& image_uri,
                                     const GenerationParams& params) {
  std::optional<std::string> url;
  if (image_uri) {
    url = endpoint_.image_transport == ImageTransport::inline_base64
              ? inline_image_data_url(*image_uri)
              : *image_uri;
  }
  const std::string response =
      post_json(endpoint_, chat_request_body(endpoint_.model, prompt, url, params));
  std::string content;
  try {
    const auto j = nlohmann::json::parse(response);
    const auto& c = j.at("choices").at(0).at("message").at("content");
    if (c.is_string()) {
      content = c.get<std::string>();
    } else if (c.is_array()) {
      for (const auto& part : c) {
        if (part.value("type", "") == "text") content += part.value("text", "");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw RequestError(ErrorClass::parse,
                       std::string("malformed chat response: ") + e.what(), 1);
  }
  if (trim(content).empty()) {
    throw RequestError(ErrorClass::empty_response, "empty chat response", 1);
  }
  return content;
}

HttpTranslationClient::HttpTranslationClient(HttpEndpoint endpoint)
    : endpoint_(std::move(endpoint)) {
  if (endpoint_.path.empty()) endpoint_.path = "/translate";
}

std::string HttpTranslationClient::translate(const std::string& text,
                                             const LanguageTag& source_lang,
                                             const LanguageTag& target_lang,
                                             const TranslationParams& params) {
  const std::string response = post_json(
      endpoint_, translation_request_body(text, source_lang, target_lang, params));
  std::string out;
  try {
    out = nlohmann::json::parse(response).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw RequestError(ErrorClass::parse,
                       std::string("malformed translation response: ") + e.what(),
                       1);
  }
  if (trim(out).empty()) {
    throw RequestError(ErrorClass::empty_response, "empty translation", 1);
  }
  return out;
}

std::string EchoChatClient::complete(const std::string& prompt,
                                     const std::optional<std::string>&,
                                     const GenerationParams&) {
  constexpr std::string_view marker = "Now perform the task exactly as above:";
  const auto tail_pos = prompt.rfind(marker);
  const std::string_view tail =
      tail_pos == std::string::npos
          ? std::string_view(prompt)
          : std::string_view(prompt).substr(tail_pos);
  const std::string_view ref_marker = "Reference example(s)\n";
  std::string_view line_source = tail;
  std::string_view key = "Input: ";
  const auto ref = tail.find(ref_marker);
  if (ref != std::string_view::npos) {
    line_source = tail.substr(ref + ref_marker.size());
    key = "Output: ";
  } else {
    line_source = tail.substr(std::min(tail.size(), tail.rfind("Input: ")));
  }
  const auto at = line_source.find(key);
  if (at == std::string_view::npos) return wrap_final(trim(prompt));
  auto text = line_source.substr(at + key.size());
  text = text.substr(0, text.find('\n'));
  return wrap_final(trim(text));
}

std::string IdentityTranslationClient::translate(const std::string& text,
                                                 const LanguageTag&,
                                                 const LanguageTag&,
                                                 const TranslationParams&) {
  return text;
}

namespace {

// Runs fn(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

void check_failure_rate(std::size_t failures, std::size_t total,
                        double threshold, std::string_view stage) {
  if (total == 0) return;
  const double rate = static_cast<double>(failures) / static_cast<double>(total);
  if (rate > threshold) {
    std::ostringstream msg;
    msg << stage << ": " << failures << " of " << total
        << " requests failed, above the failure threshold " << threshold;
    throw Error(ErrorClass::aborted, msg.str());
  }
}

RewriteFailure failure_from(const std::string& id, std::string_view stage,
                            const Error& e) {
  const auto* req = dynamic_cast<const RequestError*>(&e);
  return {id, std::string(stage), e.error_class(), req ? req->attempts() : 1,
          e.what()};
}

}  // namespace

RewriteSet build_rewrite_set(
    std::span<const CaptionRecord> captions, RewriteStrategy strategy,
    const std::map<std::string, GuidanceExample>& guidance,
    const std::map<std::string, std::string>& image_uris, ChatClient& client,
    const RewriteOptions& options) {
  options.params.validate();
  const bool targeted = strategy == RewriteStrategy::targeted_recaption;
  if (targeted) {
    std::vector<std::string> missing;
    for (const auto& c : captions) {
      if (!guidance.count(c.image_id)) missing.push_back(c.image_id);
    }
    if (!missing.empty()) {
      throw Error(ErrorClass::validation,
                  std::to_string(missing.size()) +
                      " caption(s) lack a guidance assignment, first image '" +
                      missing.front() + "'");
    }
  }

  struct Slot {
    std::optional<RewriteResult> result;
    std::optional<RewriteFailure> failure;
  };
  std::vector<Slot> slots(captions.size());
  const auto name = to_string(strategy);
  parallel_for(captions.size(), options.concurrency, [&](std::size_t i) {
    const CaptionRecord& c = captions[i];
    const GuidanceExample* g = targeted ? &guidance.at(c.image_id) : nullptr;
    std::optional<std::string> image;
    if (uses_image(strategy)) {
      auto it = image_uris.find(c.image_id);
      if (it != image_uris.end()) image = it->second;
    }
    int attempts = 0;
    try {
      const std::string prompt = render_prompt(strategy, c.text, g);
      std::string raw;
      std::string text;
      try {
        raw = client.complete(prompt, image, options.params);
        ++attempts;
        text = parse_final(raw);
      } catch (const Error& e) {
        if (e.error_class() != ErrorClass::parse || !options.retry_on_parse_failure ||
            raw.empty()) {
          throw;
        }
        raw = client.complete(prompt + std::string(kFormatReminder), image,
                              options.params);
        ++attempts;
        text = parse_final(raw);
      }
      slots[i].result = RewriteResult{c.caption_id, strategy, raw, text,
                                      g ? std::optional(*g) : std::nullopt};
    } catch (const Error& e) {
      auto f = failure_from(c.caption_id, name, e);
      if (e.error_class() == ErrorClass::parse) f.attempts = std::max(1, attempts);
      slots[i].failure = std::move(f);
    }
  });

  RewriteSet out;
  for (auto& s : slots) {
    if (s.result) out.results.push_back(std::move(*s.result));
    if (s.failure) out.failures.push_back(std::move(*s.failure));
  }
  check_failure_rate(out.failures.size(), captions.size(),
                     options.failure_threshold, name);
  return out;
}

const std::string* TranslationCache::find(const std::string& caption_id) const {
  auto it = entries_.find(caption_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void TranslationCache::put(const std::string& caption_id, std::string text) {
  entries_[caption_id] = std::move(text);
}

void TranslationCache::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& [k, v] : j.items()) entries_[k] = v.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::parse, path.string() + ": " + e.what());
  }
}

void TranslationCache::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::io, "cannot write " + path.string());
  out << nlohmann::json(entries_).dump(2) << '\n';
}

void translate_guidance(std::map<std::string, GuidanceExample>& guidance,
                        const LanguageTag& prompt_lang,
                        TranslationClient& client,
                        const TranslationParams& params,
                        TranslationCache& cache) {
  params.validate();
  for (auto& [_, g] : guidance) {
    CaptionRecord& out = g.output_caption;
    if (out.lang == prompt_lang) continue;
    const std::string* hit = cache.find(out.caption_id);
    if (!hit) {
      cache.put(out.caption_id,
                client.translate(out.text, out.lang, prompt_lang, params));
      hit = cache.find(out.caption_id);
    }
    out.text = *hit;
  }
}

TranslationBatch translate_batch(std::span<const TranslationJob> jobs,
                                 const LanguageTag& source_lang,
                                 const LanguageTag& target_lang,
                                 TranslationClient& client,
                                 const TranslationParams& params,
                                 std::size_t concurrency,
                                 double failure_threshold) {
  params.validate();
  std::vector<std::optional<CaptionRecord>> done(jobs.size());
  std::vector<std::optional<RewriteFailure>> failed(jobs.size());
  parallel_for(jobs.size(), concurrency, [&](std::size_t i) {
    const TranslationJob& job = jobs[i];
    try {
      std::string text = trim(client.translate(job.text, source_lang, target_lang, params));
      if (text.empty()) {
        throw RequestError(ErrorClass::empty_response, "empty translation", 1);
      }
      done[i] = CaptionRecord{job.caption_id, job.image_id, target_lang,
                              job.source, std::move(text)};
    } catch (const Error& e) {
      failed[i] = failure_from(job.caption_id, "translate", e);
    }
  });
  TranslationBatch out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (done[i]) out.captions.push_back(std::move(*done[i]));
    if (failed[i]) out.failures.push_back(std::move(*failed[i]));
  }
  check_failure_rate(out.failures.size(), jobs.size(), failure_threshold,
                     "translate");
  return out;
}

std::string rewrite_caption_id(std::string_view caption_id,
                               RewriteStrategy strategy) {
  return std::string(caption_id) + "@" + std::string(to_string(strategy));
}

std::string mt_caption_id(std::string_view caption_id) {
  return std::string(caption_id) + "@mt";
}

std::vector<TranslationJob> mt_jobs(std::span<const CaptionRecord> captions) {
  std::vector<TranslationJob> jobs;
  jobs.reserve(captions.size());
  for (const auto& c : captions) {
    jobs.push_back({mt_caption_id(c.caption_id), c.image_id, c.text,
                    CaptionSource::machine_translated});
  }
  return jobs;
}

std::vector<TranslationJob> rewrite_jobs(
    std::span<const RewriteResult> results,
    std::span<const CaptionRecord> captions) {
  std::unordered_map<std::string, const CaptionRecord*> by_id;
  for (const auto& c : captions) by_id.emplace(c.caption_id, &c);
  std::vector<TranslationJob> jobs;
  jobs.reserve(results.size());
  for (const auto& r : results) {
    auto it = by_id.find(r.train_caption_id);
    if (it == by_id.end()) {
      throw Error(ErrorClass::not_found,
                  "rewrite source caption '" + r.train_caption_id +
                      "' not found");
    }
    jobs.push_back({rewrite_caption_id(r.train_caption_id, r.strategy),
                    it->second->image_id, r.extracted_text,
                    caption_source_of(r.strategy)});
  }
  return jobs;
}

void RecaptionSession::record_rewrites(const RewriteSet& set) {
  results_.insert(results_.end(), set.results.begin(), set.results.end());
  recaptioned_ = true;
}

TranslationBatch RecaptionSession::translate_rewrites(
    std::span<const CaptionRecord> captions, const LanguageTag& source_lang,
    const LanguageTag& target_lang, TranslationClient& client,
    const TranslationParams& params, std::size_t concurrency,
    double failure_threshold) const {
  if (!recaptioned_) {
    throw Error(ErrorClass::validation,
                "translate requested before recaptioning in this run");
  }
  const auto jobs = rewrite_jobs(results_, captions);
  return translate_batch(jobs, source_lang, target_lang, client, params,
                         concurrency, failure_threshold);
}

std::string rewrite_to_json_line(const RewriteResult& r) {
  nlohmann::ordered_json j;
  j["train_caption_id"] = r.train_caption_id;
  j["strategy"] = to_string(r.strategy);
  j["raw_output"] = r.raw_output;
  j["extracted_text"] = r.extracted_text;
  if (r.guidance) {
    nlohmann::ordered_json g;
    g["reference_image_id"] = r.guidance->reference_image_id;
    g["similarity"] = r.guidance->similarity;
    g["input_caption_id"] = r.guidance->input_caption.caption_id;
    g["output_caption_id"] = r.guidance->output_caption.caption_id;
    g["output_text"] = r.guidance->output_caption.text;
    j["guidance"] = g;
  } else {
    j["guidance"] = nullptr;
  }
  return j.dump();
}

RewriteResult rewrite_from_json_line(std::string_view line,
                                     std::span<const CaptionRecord> captions) {
  const auto j = nlohmann::json::parse(line);
  RewriteResult r;
  r.train_caption_id = j.at("train_caption_id").get<std::string>();
  r.strategy = rewrite_strategy_from_string(j.at("strategy").get<std::string>());
  r.raw_output = j.at("raw_output").get<std::string>();
  r.extracted_text = j.at("extracted_text").get<std::string>();
  if (j.contains("guidance") && !j["guidance"].is_null()) {
    const auto& g = j["guidance"];
    GuidanceExample ex;
    ex.reference_image_id = g.at("reference_image_id").get<std::string>();
    ex.similarity = g.at("similarity").get<double>();
    const auto in_id = g.at("input_caption_id").get<std::string>();
    const auto out_id = g.at("output_caption_id").get<std::string>();
    for (const auto& c : captions) {
      if (c.caption_id == in_id) ex.input_caption = c;
      if (c.caption_id == out_id) ex.output_caption = c;
    }
    ex.output_caption.caption_id = out_id;
    ex.input_caption.caption_id = in_id;
    ex.output_caption.text = g.value("output_text", ex.output_caption.text);
    r.guidance = std::move(ex);
  }
  return r;
}

void write_rewrites(const std::filesystem::path& path,
                    std::span<const RewriteResult> results) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::io, "cannot write " + path.string());
  for (const auto& r : results) out << rewrite_to_json_line(r) << '\n';
}

std::vector<RewriteResult> read_rewrites(const std::filesystem::path& path,
                                         std::span<const CaptionRecord> captions) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  std::vector<RewriteResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(rewrite_from_json_line(line, captions));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorClass::parse, path.string() + ":" +
                                         std::to_string(line_no) + ": " +
                                         e.what());
    }
  }
  return out;
}

std::string failure_to_json_line(const RewriteFailure& f) {
  nlohmann::ordered_json j;
  j["caption_id"] = f.caption_id;
  j["stage"] = f.stage;
  j["error_class"] = to_string(f.error_class);
  j["attempts"] = f.attempts;
  j["message"] = f.message;
  return j.dump();
}

void write_failures(const std::filesystem::path& path,
                    std::span<const RewriteFailure> failures) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::io, "cannot write " + path.string());
  for (const auto& f : failures) out << failure_to_json_line(f) << '\n';
}

std::vector<RewriteResult> sample_for_audit(std::span<const RewriteResult> results,
                                            std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(results.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "audit"));
  rng.shuffle(idx);
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<RewriteResult> out;
  for (auto i : idx) out.push_back(results[i]);
  return out;
}

}  // namespace xrecap

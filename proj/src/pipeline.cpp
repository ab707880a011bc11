#include "xrecap/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "xrecap/manifest.hpp"

namespace xrecap {

using nlohmann::ordered_json;

std::filesystem::path Workspace::rewrites(RewriteStrategy s) const {
  return root / "recap" / ("rewrites_" + std::string(to_string(s)) + ".jsonl");
}

std::filesystem::path Workspace::recap_failures(RewriteStrategy s) const {
  return root / "recap" / ("failures_" + std::string(to_string(s)) + ".jsonl");
}

std::filesystem::path Workspace::audit_sample(RewriteStrategy s) const {
  return root / "recap" / ("audit_" + std::string(to_string(s)) + ".jsonl");
}

EventLog::EventLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  out_ = std::make_unique<std::ofstream>(path, std::ios::app);
  if (!*out_) throw Error(ErrorClass::io, "cannot open event log " + path.string());
}

void EventLog::emit(const std::string& event, const std::string& stage,
                    const std::string& json_fields) {
  if (!out_) return;
  ordered_json j;
  j["t_ms"] = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - start_)
                  .count();
  j["event"] = event;
  j["stage"] = stage;
  const auto extra = nlohmann::json::parse(json_fields);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  *out_ << j.dump() << '\n';
  out_->flush();
}

// Times one stage, records start/end events and writes its manifest.
struct Pipeline::Stage {
  Stage(Pipeline& p, std::string name)
      : pipeline(p), name(std::move(name)), manifest(this->name, p.ws_.root),
        start(std::chrono::steady_clock::now()) {
    pipeline.events_.emit("stage_start", this->name);
    manifest.set_config(p.config_.canonical_json());
    const auto& c = p.config_;
    manifest.set_seed("run", c.seed);
    manifest.set_seed("split", c.split_seed);
    manifest.set_seed("refsel", c.refsel.seed);
    manifest.set_seed("train", c.train.seed);
    manifest.set_seed("generation", c.generation.seed);
    if (c.synthetic) manifest.set_seed("synthetic", c.synth.seed);
  }

  void input(const std::filesystem::path& p) { manifest.add_input(p); }
  void output(const std::filesystem::path& p, bool deterministic = true) {
    if (deterministic) {
      manifest.add_output(p);
      pipeline.deterministic_outputs_.push_back(p);
    } else {
      manifest.add_log(p);
    }
  }

  void finish(const std::string& fields = "{}") {
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    manifest.add_timing(name, ms);
    manifest.write(pipeline.ws_.manifest(name));
    pipeline.timings_.emplace_back(name, ms);
    auto j = nlohmann::json::parse(fields);
    j["ms"] = ms;
    pipeline.events_.emit("stage_end", name, j.dump());
  }

  Pipeline& pipeline;
  std::string name;
  RunManifest manifest;
  std::chrono::steady_clock::time_point start;
};

Pipeline::Pipeline(PipelineConfig config, PipelineOptions options)
    : config_(std::move(config)), options_(std::move(options)) {
  config_.validate();
  ws_.root = config_.output_dir;
  std::filesystem::create_directories(ws_.root);
  events_ = EventLog(ws_.events());
}

void Pipeline::say(const std::string& line) const {
  if (options_.summary) *options_.summary << line << '\n';
}

ChatClient& Pipeline::chat() {
  if (!options_.chat) {
    if (config_.llm_backend == LlmBackend::echo) {
      options_.chat = std::make_shared<EchoChatClient>();
    } else {
      options_.chat = std::make_shared<HttpChatClient>(config_.llm.http);
    }
  }
  return *options_.chat;
}

TranslationClient& Pipeline::translator() {
  if (!options_.translator) {
    if (config_.mt_backend == MtBackend::identity) {
      options_.translator = std::make_shared<IdentityTranslationClient>();
    } else {
      options_.translator = std::make_shared<HttpTranslationClient>(config_.mt.http);
    }
  }
  return *options_.translator;
}

namespace {

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::exists(p)) {
    throw Error(ErrorClass::validation, what + ": missing " + p.string());
  }
}

std::vector<std::string> image_ids_of(const std::vector<ImageRecord>& images) {
  std::vector<std::string> ids;
  ids.reserve(images.size());
  for (const auto& im : images) ids.push_back(im.image_id);
  return ids;
}

std::vector<CaptionRecord> native_in(std::span<const CaptionRecord> captions,
                                     const LanguageTag& lang) {
  std::vector<CaptionRecord> out;
  for (const auto& c : captions) {
    if (c.lang == lang && c.source == CaptionSource::native) out.push_back(c);
  }
  return out;
}

Eigen::VectorXd to_eigen(std::span<const float> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

std::string fmt_report(const RetrievalReport& r) {
  std::ostringstream s;
  s << "I2T " << format_one_decimal(r.i2t_r1) << "/" << format_one_decimal(r.i2t_r5)
    << "/" << format_one_decimal(r.i2t_r10) << "  T2I "
    << format_one_decimal(r.t2i_r1) << "/" << format_one_decimal(r.t2i_r5) << "/"
    << format_one_decimal(r.t2i_r10) << "  mean " << format_one_decimal(r.mean_recall);
  return s.str();
}

}  // namespace

void Pipeline::corpus_synth() {
  Stage stage(*this, "corpus-synth");
  const SyntheticCorpus corpus = generate_synthetic(config_.synth);
  EmbeddingStore texts = corpus.text_mt;
  texts.merge(corpus.text_native);
  texts.merge(corpus.text_rewrite);
  write_images(ws_.images(), corpus.images);
  write_captions(ws_.captions(), corpus.captions);
  write_emb1(ws_.image_embeddings(), corpus.image_vectors);
  write_emb1(ws_.text_embeddings(), texts);
  for (const auto& p : {ws_.images(), ws_.captions(), ws_.image_embeddings(),
                        ws_.text_embeddings()}) {
    stage.output(p);
  }
  say("[corpus synth] " + std::to_string(corpus.images.size()) + " images, " +
      std::to_string(corpus.captions.size()) + " captions, " +
      std::to_string(texts.size()) + " text vectors");
  stage.finish(ordered_json{{"images", corpus.images.size()},
                            {"captions", corpus.captions.size()}}
                   .dump());
}

void Pipeline::corpus_ingest() {
  Stage stage(*this, "corpus-ingest");
  const auto& p = config_.paths;
  std::vector<std::string> problems;
  if (p.images.empty()) problems.push_back("paths.images is required");
  if (p.captions.empty()) problems.push_back("paths.captions is required");
  if (p.image_embeddings.empty()) problems.push_back("paths.image_embeddings is required");
  for (const auto& f : {p.images, p.image_embeddings}) {
    if (!f.empty() && !std::filesystem::exists(f)) {
      problems.push_back("missing " + f.string());
    }
  }
  for (const auto& f : p.captions) {
    if (!std::filesystem::exists(f)) problems.push_back("missing " + f.string());
  }
  for (const auto& f : p.text_embeddings) {
    if (!std::filesystem::exists(f)) problems.push_back("missing " + f.string());
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));

  const auto images = ingest_images(p.images);
  stage.input(p.images);
  std::vector<CaptionRecord> captions;
  std::set<std::string> seen;
  for (const auto& f : p.captions) {
    for (auto& c : ingest_captions(f)) {
      if (!seen.insert(c.caption_id).second) {
        throw Error(ErrorClass::validation, "duplicate caption_id '" + c.caption_id +
                                                "' across caption files");
      }
      captions.push_back(std::move(c));
    }
    stage.input(f);
  }
  validate_corpus(images, captions);
  const EmbeddingStore image_vectors = ingest_embeddings(p.image_embeddings);
  stage.input(p.image_embeddings);
  std::size_t missing = 0;
  std::string first_missing;
  for (const auto& im : images) {
    if (!image_vectors.contains(im.image_id)) {
      if (missing++ == 0) first_missing = im.image_id;
    }
  }
  if (missing) {
    throw Error(ErrorClass::not_found,
                std::to_string(missing) + " image(s) lack an embedding, first '" +
                    first_missing + "'");
  }
  std::optional<EmbeddingStore> texts;
  for (const auto& f : p.text_embeddings) {
    auto store = ingest_embeddings(f);
    stage.input(f);
    if (!texts) texts = std::move(store);
    else texts->merge(store);
  }
  write_images(ws_.images(), images);
  write_captions(ws_.captions(), captions);
  write_emb1(ws_.image_embeddings(), image_vectors);
  stage.output(ws_.images());
  stage.output(ws_.captions());
  stage.output(ws_.image_embeddings());
  if (texts) {
    write_emb1(ws_.text_embeddings(), *texts);
    stage.output(ws_.text_embeddings());
  }
  say("[corpus ingest] " + std::to_string(images.size()) + " images, " +
      std::to_string(captions.size()) + " captions");
  stage.finish(ordered_json{{"images", images.size()},
                            {"captions", captions.size()}}
                   .dump());
}

CorpusSplit Pipeline::split_make() {
  Stage stage(*this, "split-make");
  require_file(ws_.images(), "split make needs the ingested corpus");
  const auto images = ingest_images(ws_.images());
  stage.input(ws_.images());
  const auto split = make_split(image_ids_of(images), config_.ref_fraction,
                                config_.train_fraction, config_.split_seed);
  write_split(ws_.split(), split);
  stage.output(ws_.split());
  say("[split make] reference/train/eval = " +
      std::to_string(split.reference_ids.size()) + "/" +
      std::to_string(split.train_ids.size()) + "/" +
      std::to_string(split.eval_ids.size()));
  stage.finish(ordered_json{{"reference", split.reference_ids.size()},
                            {"train", split.train_ids.size()},
                            {"eval", split.eval_ids.size()}}
                   .dump());
  return split;
}

CorpusSplit Pipeline::load_split() const {
  require_file(ws_.split(), "split manifest");
  return read_split(ws_.split());
}

EmbeddingStore Pipeline::load_image_store() const {
  require_file(ws_.image_embeddings(), "image embeddings");
  return ingest_embeddings(ws_.image_embeddings());
}

EmbeddingStore Pipeline::load_text_store() const {
  std::optional<EmbeddingStore> store;
  if (std::filesystem::exists(ws_.text_embeddings())) {
    store = ingest_embeddings(ws_.text_embeddings());
  }
  if (!store) {
    throw Error(ErrorClass::validation,
                "text embeddings: missing " + ws_.text_embeddings().string());
  }
  return *store;
}

std::vector<CaptionRecord> Pipeline::load_all_captions() const {
  require_file(ws_.captions(), "captions");
  auto captions = ingest_captions(ws_.captions());
  if (std::filesystem::exists(ws_.translated())) {
    std::unordered_set<std::string> ids;
    for (const auto& c : captions) ids.insert(c.caption_id);
    for (auto& c : ingest_captions(ws_.translated())) {
      if (!ids.insert(c.caption_id).second) {
        throw Error(ErrorClass::validation,
                    "translated caption '" + c.caption_id +
                        "' duplicates a corpus caption");
      }
      captions.push_back(std::move(c));
    }
  }
  return captions;
}

std::vector<GuidanceAssignment> Pipeline::refsel_assign() {
  Stage stage(*this, "refsel-assign");
  const auto split = load_split();
  const auto images = load_image_store();
  require_file(ws_.captions(), "captions");
  const auto captions = ingest_captions(ws_.captions());
  stage.input(ws_.split());
  stage.input(ws_.image_embeddings());
  stage.input(ws_.captions());

  const auto src = native_in(captions, config_.source_lang);
  const auto tgt = native_in(captions, config_.target_lang);
  const CaptionsByImage src_by(src, config_.source_lang);
  const CaptionsByImage tgt_by(tgt, config_.target_lang);
  // Reference images lacking either caption language cannot guide.
  std::vector<std::string> usable;
  for (const auto& id : split.reference_ids) {
    if (!src_by.of(id).empty() && !tgt_by.of(id).empty()) usable.push_back(id);
  }
  if (usable.empty()) {
    throw Error(ErrorClass::validation,
                "no reference image has both source and target captions");
  }
  const auto index = NnIndex::build(images, usable);
  const auto assignments =
      assign_guidance(split.train_ids, images, index, src_by, tgt_by, config_.refsel);
  write_assignments(ws_.guidance(), assignments);
  stage.output(ws_.guidance());
  say("[refsel assign] " + std::to_string(assignments.size()) +
      " assignments over " + std::to_string(usable.size()) +
      " reference images, k=" + std::to_string(config_.refsel.k));
  stage.finish(ordered_json{{"assignments", assignments.size()},
                            {"reference_images", usable.size()}}
                   .dump());
  return assignments;
}

void Pipeline::recap_run(std::vector<RewriteStrategy> strategies) {
  if (strategies.empty()) strategies = config_.strategies;
  if (strategies.empty()) {
    throw ConfigError({"recap.strategies must list at least one strategy"});
  }
  const bool targeted =
      std::find(strategies.begin(), strategies.end(),
                RewriteStrategy::targeted_recaption) != strategies.end();
  if (targeted && !std::filesystem::exists(ws_.guidance())) {
    throw Error(ErrorClass::validation,
                "targeted strategy requires guidance assignments: missing " +
                    ws_.guidance().string());
  }
  Stage stage(*this, "recap-run");
  const auto split = load_split();
  const auto captions = ingest_captions(ws_.captions());
  const auto images = ingest_images(ws_.images());
  stage.input(ws_.split());
  stage.input(ws_.captions());
  stage.input(ws_.images());

  const std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
  std::vector<CaptionRecord> inputs;
  for (const auto& c : native_in(captions, config_.source_lang)) {
    if (train.count(c.image_id)) inputs.push_back(c);
  }
  std::map<std::string, std::string> uris;
  for (const auto& im : images) {
    if (im.uri) uris[im.image_id] = *im.uri;
  }

  std::map<std::string, GuidanceExample> guidance;
  if (targeted) {
    const auto assignments = read_assignments(ws_.guidance());
    stage.input(ws_.guidance());
    guidance = resolve_assignments(assignments, captions);
    TranslationCache cache;
    if (std::filesystem::exists(ws_.guidance_translations())) {
      cache.load(ws_.guidance_translations());
    }
    translate_guidance(guidance, config_.source_lang, translator(),
                       config_.translation, cache);
    cache.save(ws_.guidance_translations());
    stage.output(ws_.guidance_translations());
  }

  RewriteOptions opts;
  opts.params = config_.generation;
  opts.failure_threshold = config_.failure_threshold;
  opts.concurrency = config_.concurrency;
  opts.retry_on_parse_failure = config_.retry_on_parse_failure;
  ordered_json counts = ordered_json::object();
  for (auto s : strategies) {
    const auto set = build_rewrite_set(inputs, s, guidance, uris, chat(), opts);
    write_rewrites(ws_.rewrites(s), set.results);
    write_failures(ws_.recap_failures(s), set.failures);
    write_rewrites(ws_.audit_sample(s),
                   sample_for_audit(set.results, config_.audit_sample, config_.seed));
    stage.output(ws_.rewrites(s));
    stage.output(ws_.recap_failures(s));
    stage.output(ws_.audit_sample(s));
    session_.record_rewrites(set);
    counts[std::string(to_string(s))] = {{"results", set.results.size()},
                                         {"failures", set.failures.size()}};
    say("[recap run] " + std::string(to_string(s)) + ": " +
        std::to_string(set.results.size()) + " rewrites, " +
        std::to_string(set.failures.size()) + " failures");
  }
  stage.finish(ordered_json{{"inputs", inputs.size()}, {"strategies", counts}}.dump());
}

void Pipeline::translate_run() {
  if (!session_.has_rewrites()) {
    for (auto s : config_.strategies) {
      if (!std::filesystem::exists(ws_.rewrites(s))) {
        throw Error(ErrorClass::validation,
                    "translate requested before recaptioning: missing " +
                        ws_.rewrites(s).string());
      }
    }
  }
  Stage stage(*this, "translate-run");
  const auto split = load_split();
  const auto captions = ingest_captions(ws_.captions());
  stage.input(ws_.split());
  stage.input(ws_.captions());
  if (!session_.has_rewrites()) {
    RewriteSet loaded;
    for (auto s : config_.strategies) {
      auto part = read_rewrites(ws_.rewrites(s), captions);
      loaded.results.insert(loaded.results.end(), part.begin(), part.end());
      stage.input(ws_.rewrites(s));
    }
    session_.record_rewrites(loaded);
  }

  std::unordered_set<std::string> existing;
  for (const auto& c : captions) existing.insert(c.caption_id);
  const std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
  std::vector<CaptionRecord> sources;
  for (const auto& c : native_in(captions, config_.source_lang)) {
    if (train.count(c.image_id)) sources.push_back(c);
  }
  std::vector<TranslationJob> jobs;
  std::size_t reused = 0;
  for (auto& job : mt_jobs(sources)) {
    if (existing.count(job.caption_id)) {
      ++reused;
      continue;
    }
    jobs.push_back(std::move(job));
  }
  auto mt = translate_batch(jobs, config_.source_lang, config_.target_lang,
                            translator(), config_.translation, config_.concurrency,
                            config_.failure_threshold);
  auto rw = session_.translate_rewrites(captions, config_.source_lang,
                                        config_.target_lang, translator(),
                                        config_.translation, config_.concurrency,
                                        config_.failure_threshold);
  std::vector<CaptionRecord> out = std::move(mt.captions);
  out.insert(out.end(), rw.captions.begin(), rw.captions.end());
  std::vector<RewriteFailure> failures = std::move(mt.failures);
  failures.insert(failures.end(), rw.failures.begin(), rw.failures.end());
  write_captions(ws_.translated(), out);
  write_failures(ws_.translate_failures(), failures);
  stage.output(ws_.translated());
  stage.output(ws_.translate_failures());
  say("[translate run] " + std::to_string(out.size()) + " translations (" +
      std::to_string(reused) + " existing MT captions reused), " +
      std::to_string(failures.size()) + " failures");
  stage.finish(ordered_json{{"translations", out.size()},
                            {"reused_mt", reused},
                            {"failures", failures.size()}}
                   .dump());
}

std::vector<TrainingExample> Pipeline::training_examples(
    const std::string& variant, std::vector<RewriteStrategy> strategies) const {
  if (strategies.empty()) strategies = config_.strategies;
  const auto split = load_split();
  const auto captions = load_all_captions();
  const auto images = load_image_store();
  const auto texts = load_text_store();
  std::unordered_set<std::string> caption_ids;
  for (const auto& c : captions) caption_ids.insert(c.caption_id);

  const bool native = variant == "native";
  const bool aug = variant == "aug";
  if (!native && !aug && variant != "mt") {
    throw Error(ErrorClass::validation, "unknown training variant '" + variant + "'");
  }
  const auto& lang = native ? config_.target_lang : config_.source_lang;
  const CaptionsByImage by_image(native_in(captions, lang), lang);

  std::vector<TrainingExample> out;
  std::size_t missing = 0;
  std::string first_missing;
  for (const auto& id : split.train_ids) {
    const Eigen::VectorXd image = to_eigen(images.vector(id));
    for (const auto& c : by_image.of(id)) {
      const std::string key = native ? c.caption_id : mt_caption_id(c.caption_id);
      if (!texts.contains(key)) {
        if (missing++ == 0) first_missing = key;
        continue;
      }
      TrainingExample ex;
      ex.image_id = id;
      ex.image_vector = image;
      ex.pool.original = to_eigen(texts.vector(key));
      if (aug) {
        for (auto s : strategies) {
          const auto rid = rewrite_caption_id(c.caption_id, s);
          if (caption_ids.count(rid) && texts.contains(rid)) {
            ex.pool.rewrites.push_back(to_eigen(texts.vector(rid)));
          }
        }
      }
      out.push_back(std::move(ex));
    }
  }
  if (missing) {
    throw Error(ErrorClass::not_found,
                std::to_string(missing) +
                    " training caption vector(s) missing from the text "
                    "embeddings, first '" +
                    first_missing + "'");
  }
  if (out.empty()) {
    throw Error(ErrorClass::validation, "no training examples for variant '" + variant + "'");
  }
  return out;
}

TrainResult Pipeline::train_run(const std::string& variant,
                                std::vector<RewriteStrategy> strategies) {
  Stage stage(*this, "train-" + variant);
  TrainResult result;
  if (variant == "untrained") {
    const auto images = load_image_store();
    const auto texts = load_text_store();
    result.head = ProjectionHead::initial(texts.dim(), images.dim(), config_.train.seed);
  } else {
    const auto examples = training_examples(variant, strategies);
    std::size_t rewrites = 0;
    for (const auto& ex : examples) rewrites += ex.pool.rewrites.size();
    result = train(examples, config_.train);
    write_training_log(ws_.train_log(variant), result.log);
    stage.output(ws_.train_log(variant), false);
    say("[train " + variant + "] " + std::to_string(examples.size()) +
        " examples, " + std::to_string(rewrites) + " rewrites, loss " +
        std::to_string(result.log.front().mean_loss) + " -> " +
        std::to_string(result.log.back().mean_loss));
  }
  stage.input(ws_.split());
  save_checkpoint(result.head, {config_.train.seed, config_.train.hash()},
                  ws_.checkpoint(variant));
  stage.output(ws_.checkpoint(variant));
  stage.finish(ordered_json{{"variant", variant}, {"epochs", result.log.size()}}.dump());
  return result;
}

std::vector<std::vector<CaptionRecord>> Pipeline::gold_sets(
    const std::vector<CaptionRecord>& captions, const CorpusSplit& split) const {
  const auto native = native_in(captions, config_.target_lang);
  const CaptionsByImage by_image(native, config_.target_lang);
  std::size_t sets = 0;
  for (const auto& id : split.eval_ids) sets = std::max(sets, by_image.of(id).size());
  sets = std::min(sets, config_.max_gold_sets);
  if (sets == 0) {
    throw Error(ErrorClass::validation,
                "no eval image has a native " + config_.target_lang.code() + " caption");
  }
  std::vector<std::vector<CaptionRecord>> out(sets);
  for (const auto& id : split.eval_ids) {
    const auto& group = by_image.of(id);
    for (std::size_t k = 0; k < sets && k < group.size(); ++k) {
      out[k].push_back(group[k]);
    }
  }
  return out;
}

std::pair<std::vector<RankingResult>, std::vector<RankingResult>> Pipeline::rank_set(
    const ProjectionHead& head, const std::vector<CaptionRecord>& gold,
    const EmbeddingStore& images, const EmbeddingStore& texts) const {
  std::vector<std::string> image_ids, caption_ids;
  std::map<std::string, std::string, std::less<>> i2t_gold, t2i_gold;
  for (const auto& c : gold) {
    image_ids.push_back(c.image_id);
    caption_ids.push_back(c.caption_id);
    i2t_gold[c.image_id] = c.caption_id;
    t2i_gold[c.caption_id] = c.image_id;
  }
  const auto image_table = table_from_store(images, image_ids);
  const auto text_table = project_table(head, table_from_store(texts, caption_ids));
  return {rank_all(image_table, text_table, i2t_gold),
          rank_all(text_table, image_table, t2i_gold)};
}

namespace {

std::string rankings_jsonl(const std::vector<RankingResult>& rankings) {
  std::string out;
  for (const auto& r : rankings) {
    ordered_json j;
    j["query_id"] = r.query_id;
    j["rank_of_gold"] = r.rank_of_gold;
    const auto n = std::min<std::size_t>(10, r.ranked_gallery_ids.size());
    j["top10"] = std::vector<std::string>(r.ranked_gallery_ids.begin(),
                                          r.ranked_gallery_ids.begin() + static_cast<long>(n));
    out += j.dump();
    out += '\n';
  }
  return out;
}

ordered_json report_json(const RetrievalReport& r) {
  return ordered_json::parse(report_to_json(r));
}

}  // namespace

VariantEval Pipeline::eval_retrieve(const std::string& variant) {
  Stage stage(*this, "eval-" + variant);
  require_file(ws_.checkpoint(variant), "eval of '" + variant + "' needs a checkpoint");
  const auto images = load_image_store();
  const auto texts = load_text_store();
  const auto loaded = load_checkpoint(ws_.checkpoint(variant),
                                      HeadDims{texts.dim(), images.dim()});
  stage.input(ws_.checkpoint(variant));
  const auto split = load_split();
  const auto captions = load_all_captions();
  const auto sets = gold_sets(captions, split);

  VariantEval result;
  result.variant = variant;
  const auto dir = ws_.eval_dir(variant);
  std::vector<std::pair<std::string, RetrievalReport>> rows;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto [i2t, t2i] = rank_set(loaded.head, sets[k], images, texts);
    result.per_set.push_back(recall_report(i2t, t2i));
    const std::string tag = "set" + std::to_string(k + 1);
    write_file_atomic(dir / ("rankings_" + tag + "_i2t.jsonl"), rankings_jsonl(i2t));
    write_file_atomic(dir / ("rankings_" + tag + "_t2i.jsonl"), rankings_jsonl(t2i));
    stage.output(dir / ("rankings_" + tag + "_i2t.jsonl"));
    stage.output(dir / ("rankings_" + tag + "_t2i.jsonl"));
    rows.emplace_back(tag, result.per_set.back());
  }
  result.mean = mean_report(result.per_set);
  rows.emplace_back("mean", result.mean);

  ordered_json j;
  j["variant"] = variant;
  j["gold_sets"] = sets.size();
  j["mean"] = report_json(result.mean);
  ordered_json per = ordered_json::array();
  for (const auto& r : result.per_set) per.push_back(report_json(r));
  j["per_set"] = per;
  write_file_atomic(dir / "report.json", j.dump(2) + "\n");
  write_file_atomic(dir / "report.csv", reports_to_csv(rows));
  stage.output(dir / "report.json");
  stage.output(dir / "report.csv");
  say("[eval " + variant + "] " + fmt_report(result.mean));
  stage.finish(ordered_json{{"variant", variant},
                            {"mean_recall", result.mean.mean_recall}}
                   .dump());
  return result;
}

ErrorSetSummary Pipeline::eval_errorset(const std::string& native_variant,
                                        const std::string& mt_variant) {
  Stage stage(*this, "eval-errorset");
  const auto images = load_image_store();
  const auto texts = load_text_store();
  const HeadDims dims{texts.dim(), images.dim()};
  const auto split = load_split();
  const auto captions = load_all_captions();
  const auto sets = gold_sets(captions, split);
  const auto& gold = sets.front();

  auto rankings = [&](const std::string& variant) {
    require_file(ws_.checkpoint(variant),
                 "error sets need a '" + variant + "' checkpoint");
    stage.input(ws_.checkpoint(variant));
    return rank_set(load_checkpoint(ws_.checkpoint(variant), dims).head, gold,
                    images, texts);
  };
  const auto native = rankings(native_variant);
  const auto mt = rankings(mt_variant);

  ErrorSetSummary summary;
  summary.i2t = build_error_set(native.first, mt.first, Direction::i2t);
  summary.t2i = build_error_set(native.second, mt.second, Direction::t2i);
  const auto dir = ws_.errorset_dir();
  write_file_atomic(dir / "i2t.json", error_set_to_json(summary.i2t));
  write_file_atomic(dir / "t2i.json", error_set_to_json(summary.t2i));
  stage.output(dir / "i2t.json");
  stage.output(dir / "t2i.json");

  ordered_json restricted = ordered_json::object();
  std::vector<std::pair<std::string, RetrievalReport>> rows;
  for (const auto& v : config_.variants) {
    if (!std::filesystem::exists(ws_.checkpoint(v))) continue;
    if (summary.i2t.member_ids.empty() || summary.t2i.member_ids.empty()) {
      summary.restricted[v] = std::nullopt;
      restricted[v] = nullptr;
      continue;
    }
    const auto r = rankings(v);
    const auto report =
        restricted_report(r.first, r.second, summary.i2t, summary.t2i);
    summary.restricted[v] = report;
    restricted[v] = report_json(report);
    rows.emplace_back(v, report);
  }
  ordered_json j;
  j["native_variant"] = native_variant;
  j["mt_variant"] = mt_variant;
  j["counts"] = {{"i2t", summary.i2t.member_ids.size()},
                 {"t2i", summary.t2i.member_ids.size()}};
  j["restricted"] = restricted;
  write_file_atomic(dir / "restricted.json", j.dump(2) + "\n");
  write_file_atomic(dir / "restricted.csv", reports_to_csv(rows));
  stage.output(dir / "restricted.json");
  stage.output(dir / "restricted.csv");
  say("[eval errorset] i2t/t2i error set sizes " +
      std::to_string(summary.i2t.member_ids.size()) + "/" +
      std::to_string(summary.t2i.member_ids.size()));
  for (const auto& [name, r] : rows) say("  " + name + ": " + fmt_report(r));
  stage.finish(j["counts"].dump());
  return summary;
}

void Pipeline::run_all() {
  deterministic_outputs_.clear();
  timings_.clear();
  if (config_.synthetic) corpus_synth();
  else corpus_ingest();
  split_make();
  refsel_assign();
  recap_run();
  translate_run();
  for (const auto& v : config_.variants) train_run(v);
  for (const auto& v : config_.variants) eval_retrieve(v);
  const auto has = [&](const char* v) {
    return std::find(config_.variants.begin(), config_.variants.end(), v) !=
           config_.variants.end();
  };
  if (has("native") && has("mt")) eval_errorset();

  RunManifest manifest("pipeline-all", ws_.root);
  manifest.set_config(config_.canonical_json());
  manifest.set_seed("run", config_.seed);
  manifest.set_seed("split", config_.split_seed);
  manifest.set_seed("refsel", config_.refsel.seed);
  manifest.set_seed("train", config_.train.seed);
  manifest.set_seed("generation", config_.generation.seed);
  if (config_.synthetic) manifest.set_seed("synthetic", config_.synth.seed);
  for (const auto& p : deterministic_outputs_) manifest.add_output(p);
  for (const auto& v : config_.variants) {
    if (std::filesystem::exists(ws_.train_log(v))) manifest.add_log(ws_.train_log(v));
  }
  for (const auto& [stage, ms] : timings_) manifest.add_timing(stage, ms);
  manifest.write(ws_.manifest("pipeline-all"));
  events_.emit("run_end", "pipeline-all");
}

RougeSummary rouge_corpus(std::span<const CaptionRecord> candidates,
                          std::span<const CaptionRecord> references) {
  std::map<std::string, std::vector<const CaptionRecord*>> refs;
  for (const auto& r : references) refs[r.image_id].push_back(&r);
  RougeSummary s;
  for (auto v : kAllRougeVariants) s.mean_f1[std::string(to_string(v))] = 0.0;
  for (const auto& c : candidates) {
    auto it = refs.find(c.image_id);
    if (it == refs.end()) {
      throw Error(ErrorClass::not_found,
                  "no reference caption for image '" + c.image_id + "'");
    }
    for (auto v : kAllRougeVariants) {
      double best = 0.0;
      for (const auto* r : it->second) best = std::max(best, rouge(c.text, r->text, v));
      s.mean_f1[std::string(to_string(v))] += best;
    }
    ++s.pairs;
  }
  if (s.pairs == 0) throw Error(ErrorClass::validation, "no candidate captions");
  for (auto& [_, f] : s.mean_f1) f /= static_cast<double>(s.pairs);
  return s;
}

std::string rouge_summary_json(const RougeSummary& summary) {
  ordered_json j;
  j["candidates"] = summary.pairs;
  for (auto v : kAllRougeVariants) {
    j[std::string(to_string(v))] = summary.mean_f1.at(std::string(to_string(v)));
  }
  return j.dump(2) + "\n";
}

}  // namespace xrecap

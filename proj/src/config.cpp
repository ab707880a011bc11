#include "xrecap/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <toml.hpp>

namespace xrecap {

std::string_view to_string(LlmBackend b) {
  return b == LlmBackend::http ? "http" : "echo";
}

std::string_view to_string(MtBackend b) {
  return b == MtBackend::http ? "http" : "identity";
}

namespace {

// Reads typed keys from one TOML table, recording problems instead of
// throwing so every mistake is reported at once.
class Section {
 public:
  Section(const toml::table* table, std::string name,
          std::vector<std::string>& problems)
      : table_(table), name_(std::move(name)), problems_(problems) {}

  template <class T>
  void get(std::string_view key, T& out) {
    const toml::node* node = lookup(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value<bool>()) {
        out = *v;
        return;
      }
      mismatch(key, "a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node->value<std::string>()) {
        out = *v;
        return;
      }
      mismatch(key, "a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node->value<double>()) {
        out = *v;
        return;
      }
      mismatch(key, "a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node->value<std::int64_t>()) {
        if (*v < 0 && std::is_unsigned_v<T>) {
          problems_.push_back(full(key) + " must be non-negative");
          return;
        }
        out = static_cast<T>(*v);
        return;
      }
      mismatch(key, "an integer");
    }
  }

  void get_path(std::string_view key, std::filesystem::path& out,
                const std::filesystem::path& base) {
    std::string s;
    if (!lookup(key)) return;
    get(key, s);
    if (!s.empty()) out = resolve(s, base);
  }

  void get_strings(std::string_view key, std::vector<std::string>& out) {
    const toml::node* node = lookup(key);
    if (!node) return;
    const auto* arr = node->as_array();
    if (!arr) {
      mismatch(key, "an array of strings");
      return;
    }
    out.clear();
    for (const auto& item : *arr) {
      if (auto v = item.value<std::string>()) {
        out.push_back(*v);
      } else {
        mismatch(key, "an array of strings");
        return;
      }
    }
  }

  void get_paths(std::string_view key, std::vector<std::filesystem::path>& out,
                 const std::filesystem::path& base) {
    std::vector<std::string> raw;
    if (!lookup(key)) return;
    get_strings(key, raw);
    out.clear();
    for (const auto& s : raw) out.push_back(resolve(s, base));
  }

  void finish() {
    if (!table_) return;
    for (const auto& [k, _] : *table_) {
      if (!used_.count(std::string(k.str()))) {
        problems_.push_back("unknown key " + full(k.str()));
      }
    }
  }

  static std::filesystem::path resolve(const std::string& s,
                                       const std::filesystem::path& base) {
    std::filesystem::path p(s);
    return p.is_absolute() ? p : (base / p).lexically_normal();
  }

 private:
  const toml::node* lookup(std::string_view key) {
    used_.insert(std::string(key));
    if (!table_) return nullptr;
    return table_->get(key);
  }

  std::string full(std::string_view key) const {
    return name_.empty() ? std::string(key) : name_ + "." + std::string(key);
  }

  void mismatch(std::string_view key, std::string_view expected) {
    problems_.push_back(full(key) + " must be " + std::string(expected));
  }

  const toml::table* table_;
  std::string name_;
  std::vector<std::string>& problems_;
  std::set<std::string> used_;
};

void read_endpoint(Section& s, EndpointConfig& e, std::string& backend,
                   std::vector<std::string>& problems, const char* section) {
  s.get("backend", backend);
  s.get("base_url", e.http.base_url);
  s.get("path", e.http.path);
  s.get("model", e.http.model);
  s.get("auth_header", e.http.auth_header);
  s.get("auth_env", e.auth_env);
  s.get("timeout_seconds", e.http.timeout_seconds);
  s.get("max_attempts", e.http.retry.max_attempts);
  std::int64_t initial = e.http.retry.initial_backoff.count();
  std::int64_t max = e.http.retry.max_backoff.count();
  s.get("initial_backoff_ms", initial);
  s.get("max_backoff_ms", max);
  e.http.retry.initial_backoff = std::chrono::milliseconds(initial);
  e.http.retry.max_backoff = std::chrono::milliseconds(max);
  std::string transport(to_string(e.http.image_transport));
  s.get("image_transport", transport);
  try {
    e.http.image_transport = image_transport_from_string(transport);
  } catch (const Error& err) {
    problems.push_back(std::string(section) + ".image_transport: " + err.what());
  }
}

}  // namespace

PipelineConfig parse_config(std::string_view toml_text,
                            const std::filesystem::path& base_dir,
                            std::string_view source_name) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source_name << ":" << e.source().begin.line << ":"
        << e.source().begin.column << ": " << e.description();
    throw Error(ErrorClass::config, msg.str());
  }

  PipelineConfig c;
  std::vector<std::string> problems;
  const std::set<std::string> known{"run",   "paths", "languages", "synthetic",
                                    "split", "refsel", "llm",      "mt",
                                    "recap", "train", "eval",      "terms"};
  for (const auto& [k, v] : root) {
    if (!known.count(std::string(k.str()))) {
      problems.push_back("unknown section [" + std::string(k.str()) + "]");
    } else if (!v.is_table()) {
      problems.push_back("[" + std::string(k.str()) + "] must be a table");
    }
  }
  auto table = [&](const char* name) { return root[name].as_table(); };

  Section run(table("run"), "run", problems);
  std::string out_dir;
  run.get("output_dir", out_dir);
  if (!out_dir.empty()) c.output_dir = Section::resolve(out_dir, base_dir);
  else c.output_dir = (base_dir / c.output_dir).lexically_normal();
  run.get("seed", c.seed);
  run.finish();
  c.split_seed = c.seed;
  c.refsel.seed = c.seed;
  c.train.seed = c.seed;

  Section paths(table("paths"), "paths", problems);
  paths.get_path("images", c.paths.images, base_dir);
  paths.get_paths("captions", c.paths.captions, base_dir);
  paths.get_path("image_embeddings", c.paths.image_embeddings, base_dir);
  paths.get_paths("text_embeddings", c.paths.text_embeddings, base_dir);
  paths.get_path("taxonomy_edges", c.paths.taxonomy_edges, base_dir);
  paths.get_path("taxonomy_lemmas", c.paths.taxonomy_lemmas, base_dir);
  paths.get_path("supercategories", c.paths.supercategories, base_dir);
  paths.get_path("aliases", c.paths.aliases, base_dir);
  paths.get_path("pretagged", c.paths.pretagged, base_dir);
  paths.finish();

  Section langs(table("languages"), "languages", problems);
  std::string src = c.source_lang.code(), tgt = c.target_lang.code();
  langs.get("source", src);
  langs.get("target", tgt);
  langs.finish();
  try {
    c.source_lang = LanguageTag(src);
    c.target_lang = LanguageTag(tgt);
  } catch (const Error& e) {
    problems.push_back(std::string("languages: ") + e.what());
  }

  Section syn(table("synthetic"), "synthetic", problems);
  syn.get("enabled", c.synthetic);
  syn.get("num_concepts", c.synth.num_concepts);
  syn.get("images_per_concept", c.synth.images_per_concept);
  syn.get("dim", c.synth.dim);
  syn.get("shift_magnitude", c.synth.shift_magnitude);
  syn.get("noise_sigma", c.synth.noise_sigma);
  syn.get("image_spread", c.synth.image_spread);
  c.synth.seed = c.seed;
  syn.get("seed", c.synth.seed);
  syn.finish();

  Section split(table("split"), "split", problems);
  split.get("reference_fraction", c.ref_fraction);
  split.get("train_fraction", c.train_fraction);
  split.get("seed", c.split_seed);
  split.finish();

  Section refsel(table("refsel"), "refsel", problems);
  refsel.get("k", c.refsel.k);
  refsel.get("seed", c.refsel.seed);
  refsel.finish();

  Section llm(table("llm"), "llm", problems);
  std::string llm_backend(to_string(c.llm_backend));
  c.llm.http.path = "/v1/chat/completions";
  c.llm.auth_env = "XRECAP_LLM_AUTH";
  read_endpoint(llm, c.llm, llm_backend, problems, "llm");
  llm.get("temperature", c.generation.temperature);
  llm.get("seed", c.generation.seed);
  llm.get("max_tokens", c.generation.max_tokens);
  llm.finish();
  if (llm_backend == "http") c.llm_backend = LlmBackend::http;
  else if (llm_backend == "echo") c.llm_backend = LlmBackend::echo;
  else problems.push_back("llm.backend must be \"http\" or \"echo\"");

  Section mt(table("mt"), "mt", problems);
  std::string mt_backend(to_string(c.mt_backend));
  c.mt.http.path = "/translate";
  c.mt.auth_env = "XRECAP_MT_AUTH";
  read_endpoint(mt, c.mt, mt_backend, problems, "mt");
  mt.get("max_tokens", c.translation.max_tokens);
  std::string decoding = "greedy";
  mt.get("decoding", decoding);
  mt.finish();
  if (decoding != "greedy") problems.push_back("mt.decoding must be \"greedy\"");
  if (mt_backend == "http") c.mt_backend = MtBackend::http;
  else if (mt_backend == "identity") c.mt_backend = MtBackend::identity;
  else problems.push_back("mt.backend must be \"http\" or \"identity\"");

  Section recap(table("recap"), "recap", problems);
  std::vector<std::string> strategies;
  for (auto s : c.strategies) strategies.emplace_back(to_string(s));
  recap.get_strings("strategies", strategies);
  c.strategies.clear();
  for (const auto& s : strategies) {
    try {
      c.strategies.push_back(rewrite_strategy_from_string(s));
    } catch (const Error& e) {
      problems.push_back(std::string("recap.strategies: ") + e.what());
    }
  }
  recap.get("failure_threshold", c.failure_threshold);
  recap.get("concurrency", c.concurrency);
  recap.get("retry_on_parse_failure", c.retry_on_parse_failure);
  recap.get("audit_sample", c.audit_sample);
  recap.finish();

  Section train(table("train"), "train", problems);
  train.get("batch_size", c.train.batch_size);
  train.get("learning_rate", c.train.learning_rate);
  train.get("epochs", c.train.epochs);
  train.get("temperature", c.train.temperature);
  std::string optimizer(to_string(c.train.optimizer));
  train.get("optimizer", optimizer);
  try {
    c.train.optimizer = optimizer_from_string(optimizer);
  } catch (const Error& e) {
    problems.push_back(std::string("train.optimizer: ") + e.what());
  }
  train.get("seed", c.train.seed);
  train.get_strings("variants", c.variants);
  train.finish();

  Section eval(table("eval"), "eval", problems);
  eval.get("max_gold_sets", c.max_gold_sets);
  eval.finish();

  Section terms(table("terms"), "terms", problems);
  std::string mode = c.terms.mode == NounMode::lexicon ? "lexicon" : "pretagged";
  terms.get("mode", mode);
  try {
    c.terms.mode = noun_mode_from_string(mode);
  } catch (const Error& e) {
    problems.push_back(std::string("terms.mode: ") + e.what());
  }
  terms.get("min_count", c.terms.min_count);
  terms.get("union_threshold", c.terms.union_threshold);
  terms.finish();

  if (!problems.empty()) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
    throw ConfigError(std::move(problems));
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorClass::io, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto base = std::filesystem::absolute(path).parent_path();
  return parse_config(buf.str(), base, path.string());
}

void apply_env_overrides(PipelineConfig& config) {
  for (auto* e : {&config.llm, &config.mt}) {
    if (e->auth_env.empty()) continue;
    if (const char* v = std::getenv(e->auth_env.c_str()); v && *v) {
      e->http.auth_value = v;
    }
  }
}

void PipelineConfig::validate() const {
  std::vector<std::string> problems;
  const auto collect = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
  };
  collect([&] { train.validate(); });
  collect([&] { generation.validate(); });
  collect([&] { translation.validate(); });
  if (synthetic) collect([&] { synth.validate(); });
  if (!(ref_fraction > 0) || !(train_fraction > 0) ||
      ref_fraction + train_fraction > 1.0) {
    problems.push_back(
        "split fractions must be positive with reference + train <= 1");
  }
  if (refsel.k == 0) problems.push_back("refsel.k must be at least 1");
  if (!(failure_threshold >= 0.0 && failure_threshold <= 1.0)) {
    problems.push_back("recap.failure_threshold must be in [0, 1]");
  }
  if (concurrency == 0) problems.push_back("recap.concurrency must be >= 1");
  if (max_gold_sets == 0) problems.push_back("eval.max_gold_sets must be >= 1");
  for (const auto& v : variants) {
    if (v != "untrained" && v != "mt" && v != "aug" && v != "native") {
      problems.push_back("train.variants: unknown variant '" + v +
                         "' (expected untrained, mt, aug or native)");
    }
  }
  const auto exists = [&](const char* key, const std::filesystem::path& p) {
    if (!p.empty() && !std::filesystem::exists(p)) {
      problems.push_back("paths." + std::string(key) + ": missing " + p.string());
    }
  };
  exists("images", paths.images);
  for (const auto& p : paths.captions) exists("captions", p);
  exists("image_embeddings", paths.image_embeddings);
  for (const auto& p : paths.text_embeddings) exists("text_embeddings", p);
  exists("taxonomy_edges", paths.taxonomy_edges);
  exists("taxonomy_lemmas", paths.taxonomy_lemmas);
  exists("supercategories", paths.supercategories);
  exists("aliases", paths.aliases);
  exists("pretagged", paths.pretagged);
  if (llm_backend == LlmBackend::http && llm.http.base_url.empty()) {
    problems.push_back("llm.base_url is required for the http backend");
  }
  if (mt_backend == MtBackend::http && mt.http.base_url.empty()) {
    problems.push_back("mt.base_url is required for the http backend");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string PipelineConfig::canonical_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  auto p = [](const std::filesystem::path& x) { return x.generic_string(); };
  nlohmann::ordered_json paths_j;
  paths_j["images"] = p(paths.images);
  std::vector<std::string> caps, texts;
  for (const auto& x : paths.captions) caps.push_back(p(x));
  for (const auto& x : paths.text_embeddings) texts.push_back(p(x));
  paths_j["captions"] = caps;
  paths_j["image_embeddings"] = p(paths.image_embeddings);
  paths_j["text_embeddings"] = texts;
  paths_j["taxonomy_edges"] = p(paths.taxonomy_edges);
  paths_j["taxonomy_lemmas"] = p(paths.taxonomy_lemmas);
  paths_j["supercategories"] = p(paths.supercategories);
  paths_j["aliases"] = p(paths.aliases);
  paths_j["pretagged"] = p(paths.pretagged);
  j["paths"] = paths_j;
  j["languages"] = {{"source", source_lang.code()}, {"target", target_lang.code()}};
  j["synthetic"] = {{"enabled", synthetic},
                    {"num_concepts", synth.num_concepts},
                    {"images_per_concept", synth.images_per_concept},
                    {"dim", synth.dim},
                    {"shift_magnitude", synth.shift_magnitude},
                    {"noise_sigma", synth.noise_sigma},
                    {"image_spread", synth.image_spread},
                    {"seed", synth.seed}};
  j["split"] = {{"reference_fraction", ref_fraction},
                {"train_fraction", train_fraction},
                {"seed", split_seed}};
  j["refsel"] = {{"k", refsel.k}, {"seed", refsel.seed}};
  auto endpoint = [](const EndpointConfig& e, std::string_view backend) {
    nlohmann::ordered_json o;
    o["backend"] = backend;
    o["base_url"] = e.http.base_url;
    o["path"] = e.http.path;
    o["model"] = e.http.model;
    o["image_transport"] = to_string(e.http.image_transport);
    o["max_attempts"] = e.http.retry.max_attempts;
    return o;
  };
  auto llm_j = endpoint(llm, to_string(llm_backend));
  llm_j["temperature"] = generation.temperature;
  llm_j["seed"] = generation.seed;
  llm_j["max_tokens"] = generation.max_tokens;
  j["llm"] = llm_j;
  auto mt_j = endpoint(mt, to_string(mt_backend));
  mt_j["max_tokens"] = translation.max_tokens;
  mt_j["decoding"] = to_string(translation.decoding);
  j["mt"] = mt_j;
  std::vector<std::string> strat;
  for (auto s : strategies) strat.emplace_back(to_string(s));
  j["recap"] = {{"strategies", strat},
                {"failure_threshold", failure_threshold},
                {"retry_on_parse_failure", retry_on_parse_failure},
                {"audit_sample", audit_sample}};
  j["train"] = {{"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"epochs", train.epochs},
                {"temperature", train.temperature},
                {"optimizer", to_string(train.optimizer)},
                {"seed", train.seed},
                {"variants", variants}};
  j["eval"] = {{"max_gold_sets", max_gold_sets}};
  j["terms"] = {{"mode", terms.mode == NounMode::lexicon ? "lexicon" : "pretagged"},
                {"min_count", terms.min_count},
                {"union_threshold", terms.union_threshold}};
  return j.dump();
}

}  // namespace xrecap

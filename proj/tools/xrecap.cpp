// xrecap command-line entry point.
//
// Precedence: command-line flags > environment (endpoint credentials only)
// > config file > built-in defaults.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xrecap/config.hpp"
#include "xrecap/manifest.hpp"
#include "xrecap/pipeline.hpp"
#include "xrecap/termlens.hpp"

namespace {

using namespace xrecap;

struct GlobalFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> strategies;
  std::optional<std::size_t> k;
  std::optional<std::size_t> concurrency;
  bool quiet = false;
};

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

PipelineConfig effective_config(const GlobalFlags& g) {
  PipelineConfig c;
  if (!g.config.empty()) c = load_config(g.config);
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.seed) {
    c.seed = c.split_seed = c.refsel.seed = c.train.seed = c.synth.seed = *g.seed;
  }
  if (!g.strategies.empty()) {
    c.strategies.clear();
    for (const auto& s : g.strategies) c.strategies.push_back(rewrite_strategy_from_string(s));
  }
  if (g.k) c.refsel.k = *g.k;
  if (g.concurrency) c.concurrency = *g.concurrency;
  apply_env_overrides(c);
  return c;
}

std::vector<CaptionRecord> captions_in(const std::filesystem::path& path,
                                       const std::optional<std::string>& lang) {
  auto all = ingest_captions(path);
  if (!lang) return all;
  std::vector<CaptionRecord> out;
  for (auto& c : all) {
    if (c.lang.code() == *lang) out.push_back(std::move(c));
  }
  return out;
}

void require_terms_paths(const PipelineConfig& c) {
  std::vector<std::string> problems;
  if (c.paths.taxonomy_edges.empty()) problems.push_back("paths.taxonomy_edges is required");
  if (c.paths.taxonomy_lemmas.empty()) problems.push_back("paths.taxonomy_lemmas is required");
  if (c.paths.supercategories.empty()) problems.push_back("paths.supercategories is required");
  if (c.terms.mode == NounMode::pretagged && c.paths.pretagged.empty()) {
    problems.push_back("paths.pretagged is required in pretagged mode");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void terms_analyze(const PipelineConfig& c, const std::string& captions_path,
                   const std::optional<std::string>& lang, const std::string& out) {
  require_terms_paths(c);
  RunManifest manifest("terms-analyze", c.output_dir);
  manifest.set_config(c.canonical_json());
  const auto taxonomy = Taxonomy::load(c.paths.taxonomy_edges, c.paths.taxonomy_lemmas);
  const auto supercats = SupercategorySet::load(c.paths.supercategories);
  supercats.check_against(taxonomy);
  AliasMap aliases;
  if (!c.paths.aliases.empty()) {
    aliases = load_aliases(c.paths.aliases);
    manifest.add_input(c.paths.aliases);
  }
  const auto captions = captions_in(captions_path, lang);
  std::vector<std::vector<std::string>> nouns;
  if (c.terms.mode == NounMode::lexicon) {
    for (const auto& cap : captions) nouns.push_back(extract_nouns_lexicon(cap.text, taxonomy));
  } else {
    std::map<std::string, const TaggedCaption*> by_id;
    const auto tagged = load_pretagged(c.paths.pretagged);
    for (const auto& t : tagged) by_id[t.caption_id] = &t;
    for (const auto& cap : captions) {
      auto it = by_id.find(cap.caption_id);
      if (it == by_id.end()) {
        throw Error(ErrorClass::not_found,
                    "no pretagged tokens for caption '" + cap.caption_id + "'");
      }
      nouns.push_back(extract_nouns_pretagged(*it->second, &taxonomy));
    }
    manifest.add_input(c.paths.pretagged);
  }
  const auto d = distribution(nouns, taxonomy, supercats, aliases);
  write_file_atomic(out, distribution_json(d, c.terms.min_count));
  for (const auto& p : {std::filesystem::path(captions_path), c.paths.taxonomy_edges,
                        c.paths.taxonomy_lemmas, c.paths.supercategories}) {
    manifest.add_input(p);
  }
  manifest.add_output(out);
  manifest.write(Workspace{c.output_dir}.manifest("terms-analyze"));
  std::cerr << "[terms analyze] " << captions.size() << " captions, " << d.total_nouns
            << " nouns, " << d.supercategory_total() << " mapped, " << d.unmapped_count
            << " unmapped, " << d.unmatched_count << " unmatched\n";
}

void terms_compare(const PipelineConfig& c, const std::string& a, const std::string& b,
                   const std::string& out) {
  RunManifest manifest("terms-compare", c.output_dir);
  manifest.set_config(c.canonical_json());
  const auto da = distribution_from_json(read_file(a));
  const auto db = distribution_from_json(read_file(b));
  const auto rows = compare(da, db, c.terms.union_threshold);
  manifest.add_input(a);
  manifest.add_input(b);
  for (const auto& s : da.supercategories) {
    const auto path = std::filesystem::path(out) / (s + ".csv");
    write_file_atomic(path, comparison_csv(rows, s));
    manifest.add_output(path);
  }
  manifest.write(Workspace{c.output_dir}.manifest("terms-compare"));
  std::size_t flagged = 0;
  for (const auto& r : rows) flagged += r.flagged;
  std::cerr << "[terms compare] " << rows.size() << " terms, " << flagged << " flagged\n";
}

void eval_rouge(const PipelineConfig& c, const std::string& candidates,
                const std::string& references, const std::string& out) {
  RunManifest manifest("eval-rouge", c.output_dir);
  manifest.set_config(c.canonical_json());
  const auto cand = ingest_captions(candidates);
  const auto refs = ingest_captions(references);
  const auto summary = rouge_corpus(cand, refs);
  write_file_atomic(out, rouge_summary_json(summary));
  manifest.add_input(candidates);
  manifest.add_input(references);
  manifest.add_output(out);
  manifest.write(Workspace{c.output_dir}.manifest("eval-rouge"));
  std::cerr << "[eval rouge] " << summary.pairs << " candidates";
  for (auto v : kAllRougeVariants) {
    const std::string name(to_string(v));
    std::cerr << "  " << name << " " << summary.mean_f1.at(name);
  }
  std::cerr << "\n";
}

int exit_code(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::config:
      return 2;
    case ErrorClass::validation:
      return 3;
    case ErrorClass::not_found:
      return 4;
    case ErrorClass::io:
      return 5;
    case ErrorClass::transport:
    case ErrorClass::http_status:
    case ErrorClass::empty_response:
      return 6;
    case ErrorClass::aborted:
      return 7;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xrecap: cross-lingual recaptioning pipeline"};
  app.set_version_flag("--version", xrecap::tool_version());
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("-c,--config", g.config, "TOML config file");
  app.add_option("-o,--out", g.out, "Output directory (overrides run.output_dir)");
  app.add_option("--seed", g.seed, "Overrides every seed in the config");
  app.add_option("--strategy", g.strategies,
                 "Rewrite strategy (paraphrase, diverse, targeted); repeatable");
  app.add_option("--k", g.k, "Neighbor rank for guidance selection");
  app.add_option("--concurrency", g.concurrency, "Parallel endpoint requests");
  app.add_flag("-q,--quiet", g.quiet, "No summary lines on stderr");

  auto* corpus = app.add_subcommand("corpus", "Corpus ingestion")->require_subcommand(1);
  auto* corpus_ingest = corpus->add_subcommand("ingest", "Validate and copy inputs into the run");
  auto* corpus_synth = corpus->add_subcommand("synth", "Generate the synthetic corpus");

  auto* split = app.add_subcommand("split", "Image splits")->require_subcommand(1);
  auto* split_make = split->add_subcommand("make", "Reference/train/eval split");

  auto* refsel = app.add_subcommand("refsel", "Guidance selection")->require_subcommand(1);
  auto* refsel_assign = refsel->add_subcommand("assign", "Assign guidance to train images");

  auto* recap = app.add_subcommand("recap", "Caption rewriting")->require_subcommand(1);
  auto* recap_run = recap->add_subcommand("run", "Rewrite train captions");

  auto* translate = app.add_subcommand("translate", "Machine translation")->require_subcommand(1);
  auto* translate_run = translate->add_subcommand("run", "Translate captions and rewrites");

  auto* train = app.add_subcommand("train", "Projection head training")->require_subcommand(1);
  auto* train_run = train->add_subcommand("run", "Train one variant");
  std::string variant = "aug";
  train_run->add_option("--variant", variant, "untrained, mt, aug or native")
      ->check(CLI::IsMember({"untrained", "mt", "aug", "native"}));

  auto* eval = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
  auto* eval_retrieve = eval->add_subcommand("retrieve", "Recall@k for trained variants");
  std::vector<std::string> eval_variants;
  eval_retrieve->add_option("--variant", eval_variants, "Variant to evaluate; repeatable");
  auto* eval_errorset = eval->add_subcommand("errorset", "Native vs. translation error sets");
  std::string native_variant = "native", mt_variant = "mt";
  eval_errorset->add_option("--native", native_variant, "Native-trained variant");
  eval_errorset->add_option("--mt", mt_variant, "MT-trained variant");
  auto* eval_rouge_cmd = eval->add_subcommand("rouge", "ROUGE against reference captions");
  std::string candidates, references, rouge_out;
  eval_rouge_cmd->add_option("--candidates", candidates)->required()->check(CLI::ExistingFile);
  eval_rouge_cmd->add_option("--references", references)->required()->check(CLI::ExistingFile);
  eval_rouge_cmd->add_option("--report", rouge_out, "Output JSON")->required();

  auto* terms = app.add_subcommand("terms", "Supercategory term analysis")->require_subcommand(1);
  auto* terms_analyze_cmd = terms->add_subcommand("analyze", "Term distribution of a caption file");
  std::string terms_captions, terms_out;
  std::optional<std::string> terms_lang;
  terms_analyze_cmd->add_option("--captions", terms_captions)->required()->check(CLI::ExistingFile);
  terms_analyze_cmd->add_option("--lang", terms_lang, "Only captions in this language");
  terms_analyze_cmd->add_option("--report", terms_out, "Output JSON")->required();
  auto* terms_compare_cmd = terms->add_subcommand("compare", "Compare two term distributions");
  std::string terms_a, terms_b, compare_out;
  terms_compare_cmd->add_option("--a", terms_a, "Distribution JSON from terms analyze")->required()->check(CLI::ExistingFile);
  terms_compare_cmd->add_option("--b", terms_b, "Distribution JSON to compare against")->required()->check(CLI::ExistingFile);
  terms_compare_cmd->add_option("--report-dir", compare_out, "One CSV per supercategory")
      ->required();

  auto* pipeline = app.add_subcommand("pipeline", "End-to-end run")->require_subcommand(1);
  auto* pipeline_all = pipeline->add_subcommand("all", "Every stage in order");

  auto* manifest = app.add_subcommand("manifest", "Run manifests")->require_subcommand(1);
  auto* manifest_verify = manifest->add_subcommand("verify", "Re-check recorded digests");
  std::string manifest_path;
  manifest_verify->add_option("path", manifest_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error class=usage message=" << quote(e.what()) << "\n";
    return 64;
  }

  try {
    if (*manifest_verify) {
      const auto problems = verify_manifest(manifest_path);
      for (const auto& p : problems) std::cerr << p << "\n";
      if (!problems.empty()) {
        throw Error(ErrorClass::validation,
                    std::to_string(problems.size()) + " manifest entries do not verify");
      }
      if (!g.quiet) std::cerr << "[manifest verify] ok\n";
      return 0;
    }

    const auto config = effective_config(g);
    if (*terms_analyze_cmd) {
      terms_analyze(config, terms_captions, terms_lang, terms_out);
      return 0;
    }
    if (*terms_compare_cmd) {
      terms_compare(config, terms_a, terms_b, compare_out);
      return 0;
    }
    if (*eval_rouge_cmd) {
      eval_rouge(config, candidates, references, rouge_out);
      return 0;
    }

    PipelineOptions options;
    options.summary = g.quiet ? nullptr : &std::cerr;
    Pipeline p(config, options);
    if (*corpus_ingest) p.corpus_ingest();
    else if (*corpus_synth) p.corpus_synth();
    else if (*split_make) p.split_make();
    else if (*refsel_assign) p.refsel_assign();
    else if (*recap_run) p.recap_run();
    else if (*translate_run) p.translate_run();
    else if (*train_run) p.train_run(variant);
    else if (*eval_retrieve) {
      if (eval_variants.empty()) eval_variants = config.variants;
      for (const auto& v : eval_variants) p.eval_retrieve(v);
    } else if (*eval_errorset) p.eval_errorset(native_variant, mt_variant);
    else if (*pipeline_all) p.run_all();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error class=config message=" << quote(e.what()) << "\n";
    return exit_code(ErrorClass::config);
  } catch (const RequestError& e) {
    std::cerr << "error class=" << to_string(e.error_class())
              << " attempts=" << e.attempts() << " message=" << quote(e.what()) << "\n";
    return exit_code(e.error_class());
  } catch (const Error& e) {
    std::cerr << "error class=" << to_string(e.error_class())
              << " message=" << quote(e.what()) << "\n";
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "error class=internal message=" << quote(e.what()) << "\n";
    return 1;
  }
}

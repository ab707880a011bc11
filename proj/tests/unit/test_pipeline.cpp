#include <doctest.h>

#include <nlohmann/json.hpp>

#include "util.hpp"
#include "xrecap/manifest.hpp"
#include "xrecap/pipeline.hpp"

using namespace xrecap;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const fs::path& out, const std::string& extra = "") {
  const std::string toml = R"(
[run]
seed = 5
[synthetic]
enabled = true
num_concepts = 3
images_per_concept = 30
dim = 8
[llm]
backend = "echo"
[mt]
backend = "identity"
[train]
batch_size = 16
epochs = 3
learning_rate = 3e-3
)" + extra;
  auto c = parse_config(toml, fs::current_path());
  c.output_dir = out;
  return c;
}

std::map<std::string, std::string> outputs_of(const fs::path& root) {
  const auto j = nlohmann::json::parse(read_file(Workspace{root}.manifest("pipeline-all")));
  return j.at("outputs").get<std::map<std::string, std::string>>();
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("full run writes reports and verifiable manifests") {
  const auto dir = testutil::scratch("pipeline_full");
  Pipeline(small_config(dir)).run_all();
  const Workspace ws{dir};
  for (const auto* v : {"untrained", "mt", "aug", "native"}) {
    const auto report = nlohmann::json::parse(read_file(ws.eval_dir(v) / "report.json"));
    CHECK(report["variant"] == v);
    const double mean = report["mean"]["mean_recall"];
    CHECK(mean >= 0.0);
    CHECK(mean <= 100.0);
    CHECK(fs::exists(ws.checkpoint(v)));
  }
  CHECK(fs::exists(ws.errorset_dir() / "restricted.json"));
  CHECK(fs::exists(ws.events()));
  for (const auto& e : fs::directory_iterator(dir / "manifests")) {
    CHECK_MESSAGE(verify_manifest(e.path()).empty(), e.path().string());
  }
}

TEST_CASE("stages composed by hand match the full run") {
  const auto a = testutil::scratch("pipeline_all");
  const auto b = testutil::scratch("pipeline_steps");
  Pipeline(small_config(a)).run_all();
  Pipeline p(small_config(b));
  p.corpus_synth();
  p.split_make();
  p.refsel_assign();
  p.recap_run();
  p.translate_run();
  for (const auto* v : {"untrained", "mt", "aug", "native"}) p.train_run(v);
  for (const auto* v : {"untrained", "mt", "aug", "native"}) p.eval_retrieve(v);
  p.eval_errorset();
  for (const auto& [rel, digest] : outputs_of(a)) {
    REQUIRE_MESSAGE(fs::exists(b / rel), rel);
    CHECK_MESSAGE(sha256_file(b / rel) == digest, rel);
  }
}

TEST_CASE("rerunning into the same directory is idempotent") {
  const auto dir = testutil::scratch("pipeline_rerun");
  Pipeline(small_config(dir)).run_all();
  const auto first = outputs_of(dir);
  Pipeline(small_config(dir)).run_all();
  CHECK(outputs_of(dir) == first);
}

TEST_CASE("targeted recaptioning needs guidance assignments") {
  const auto dir = testutil::scratch("pipeline_noguide");
  Pipeline p(small_config(dir));
  p.corpus_synth();
  p.split_make();
  try {
    p.recap_run();
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.error_class() == ErrorClass::validation);
    CHECK(std::string(e.what()).find("guidance.jsonl") != std::string::npos);
  }
}

TEST_CASE("augmented pools hold one rewrite per strategy") {
  const auto dir = testutil::scratch("pipeline_pools");
  Pipeline p(small_config(dir, "[recap]\nstrategies = [\"paraphrase\", \"diverse\", \"targeted\"]\n"));
  p.corpus_synth();
  p.split_make();
  p.refsel_assign();
  p.recap_run();
  p.translate_run();
  const auto aug = p.training_examples("aug");
  const auto mt = p.training_examples("mt");
  REQUIRE_FALSE(aug.empty());
  CHECK(aug.size() == mt.size());
  for (const auto& ex : aug) CHECK(ex.pool.rewrites.size() == 3);
  for (const auto& ex : mt) CHECK(ex.pool.rewrites.empty());
  CHECK(p.training_examples("aug", {RewriteStrategy::paraphrase}).front().pool.rewrites.size() == 1);
  CHECK_THROWS_AS(p.training_examples("bogus"), Error);
}

TEST_CASE("rouge corpus takes the best reference per image") {
  std::vector<CaptionRecord> refs{{"r1", "i1", LanguageTag("en"), CaptionSource::native, "a dog runs"},
                                  {"r2", "i1", LanguageTag("en"), CaptionSource::native, "a cat sleeps"}};
  std::vector<CaptionRecord> cands{{"c1", "i1", LanguageTag("en"), CaptionSource::native, "a cat sleeps"}};
  const auto s = rouge_corpus(cands, refs);
  CHECK(s.pairs == 1);
  CHECK(s.mean_f1.at("rougeL") == doctest::Approx(1.0));
}

}

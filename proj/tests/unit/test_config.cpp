#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "util.hpp"
#include "xrecap/config.hpp"
#include "xrecap/manifest.hpp"

using namespace xrecap;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
[llm]
backend = "echo"
[mt]
backend = "identity"
)";

std::vector<std::string> problems_of(std::string_view toml) {
  try {
    parse_config(toml, fs::current_path());
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, std::string_view needle) {
  for (const auto& p : problems) {
    if (p.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("bundled synthetic config loads") {
  const auto c = load_config(fs::path(XRECAP_SOURCE_DIR) / "configs" / "synthetic.toml");
  CHECK(c.synthetic);
  CHECK(c.synth.num_concepts == 4);
  CHECK(c.train.batch_size == 32);
  CHECK(c.variants.size() == 4);
  CHECK(c.output_dir.is_absolute());
  CHECK(c.llm_backend == LlmBackend::echo);
  CHECK(c.generation.max_tokens == 448);
  CHECK(c.translation.max_tokens == 200);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("run seed propagates to stage seeds unless overridden") {
  auto c = parse_config(std::string(kMinimal) + "[run]\nseed = 11\n[split]\nseed = 3\n",
                        fs::current_path());
  CHECK(c.seed == 11);
  CHECK(c.split_seed == 3);
  CHECK(c.refsel.seed == 11);
  CHECK(c.train.seed == 11);
}

TEST_CASE("every problem is reported together") {
  const auto p = problems_of(R"(
[train]
batch_size = 1
epochs = 0
bogus = 1
[wat]
x = 1
)");
  CHECK(mentions(p, "unknown key train.bogus"));
  CHECK(mentions(p, "wat"));
  CHECK(mentions(p, "batch_size"));
  CHECK(mentions(p, "epochs"));
  CHECK(mentions(p, "llm.base_url"));
}

TEST_CASE("type mismatches are config errors") {
  const auto p = problems_of(std::string(kMinimal) + "[train]\nepochs = \"many\"\n");
  CHECK(mentions(p, "train.epochs"));
  try {
    parse_config("this is = = not toml", fs::current_path());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.error_class() == ErrorClass::config);
  }
}

TEST_CASE("missing paths are reported by validation") {
  const auto c = parse_config(std::string(kMinimal) + "[paths]\nimages = \"/nonexistent/i.jsonl\"\n",
                              fs::current_path());
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(mentions(e.problems(), "paths.images: missing /nonexistent/i.jsonl"));
  }
}

TEST_CASE("relative paths resolve against the config directory") {
  const auto c = load_config(testutil::data("configs/terms.toml"));
  CHECK(c.paths.taxonomy_edges == fs::weakly_canonical(testutil::data("termlens/edges.tsv")));
  CHECK(c.terms.min_count == 0);
  CHECK(c.terms.mode == NounMode::lexicon);
}

TEST_CASE("invalid fixture config lists all problems") {
  try {
    load_config(testutil::data("configs/invalid.toml"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() >= 3);
    CHECK(e.error_class() == ErrorClass::config);
  }
}

TEST_CASE("credentials come from the environment") {
  auto c = parse_config(R"(
[llm]
backend = "http"
base_url = "http://localhost:1"
auth_env = "XRECAP_TEST_TOKEN"
[mt]
backend = "identity"
)", fs::current_path());
  ::setenv("XRECAP_TEST_TOKEN", "Bearer abc", 1);
  apply_env_overrides(c);
  ::unsetenv("XRECAP_TEST_TOKEN");
  CHECK(c.llm.http.auth_value == "Bearer abc");
  CHECK(c.canonical_json().find("Bearer abc") == std::string::npos);
}

TEST_CASE("canonical json is stable and reflects settings") {
  const auto a = parse_config(kMinimal, fs::current_path());
  const auto b = parse_config(kMinimal, fs::current_path());
  CHECK(a.canonical_json() == b.canonical_json());
  const auto c = parse_config(std::string(kMinimal) + "[train]\nepochs = 3\n", fs::current_path());
  CHECK(a.canonical_json() != c.canonical_json());
  CHECK(nlohmann::json::parse(c.canonical_json())["train"]["epochs"] == 3);
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest records digests and detects tampering") {
  const auto dir = testutil::scratch("manifest");
  write_file_atomic(dir / "in.txt", "input");
  write_file_atomic(dir / "out.txt", "output");
  RunManifest m("test", dir);
  m.set_config("{}");
  m.set_seed("run", 7);
  m.add_input(dir / "in.txt");
  m.add_output(dir / "out.txt");
  m.add_timing("stage", 1.5);
  m.write(dir / "manifest.json");

  const auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(j["outputs"]["out.txt"] == sha256_hex("output"));
  CHECK(j["seeds"]["run"] == 7);
  CHECK(j["config_sha256"] == sha256_hex("{}"));
  CHECK(verify_manifest(dir / "manifest.json").empty());

  write_file_atomic(dir / "out.txt", "0utput");
  const auto changed = verify_manifest(dir / "manifest.json");
  REQUIRE(changed.size() == 1);
  CHECK(changed[0].find("out.txt") != std::string::npos);

  fs::remove(dir / "in.txt");
  CHECK(verify_manifest(dir / "manifest.json").size() == 2);
}

TEST_CASE("atomic writes leave no temporaries") {
  const auto dir = testutil::scratch("atomic");
  write_file_atomic(dir / "a" / "f.txt", "x");
  write_file_atomic(dir / "a" / "f.txt", "y");
  CHECK(read_file(dir / "a" / "f.txt") == "y");
  CHECK(std::distance(fs::directory_iterator(dir / "a"), fs::directory_iterator()) == 1);
  CHECK_THROWS_AS(read_file(dir / "missing"), Error);
}

}

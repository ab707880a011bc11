#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "util.hpp"
#include "xrecap/corpus.hpp"
#include "xrecap/termlens.hpp"

using namespace xrecap;

namespace {

struct Fixture {
  Taxonomy taxonomy = Taxonomy::load(testutil::data("termlens/edges.tsv"),
                                     testutil::data("termlens/lemmas.tsv"));
  SupercategorySet supercats = SupercategorySet::load(testutil::data("termlens/supercategories.tsv"));
  AliasMap aliases = load_aliases(testutil::data("termlens/aliases.tsv"));
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Taxonomy toy(const std::string& edges, const std::string& lemmas = "") {
  std::istringstream e(edges), l(lemmas);
  return Taxonomy::parse(e, l);
}

TermDistribution lexicon_distribution(const std::string& lang) {
  const auto& f = fixture();
  std::vector<std::vector<std::string>> nouns;
  for (const auto& c : ingest_captions(testutil::data("termlens/bilingual_captions.jsonl"))) {
    if (c.lang.code() == lang) nouns.push_back(extract_nouns_lexicon(c.text, f.taxonomy));
  }
  return distribution(nouns, f.taxonomy, f.supercats, f.aliases);
}

const ComparisonRow& row(const std::vector<ComparisonRow>& rows, const std::string& term) {
  auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.term == term; });
  REQUIRE(it != rows.end());
  return *it;
}

}  // namespace

TEST_SUITE("termlens") {

TEST_CASE("toy chain") {
  const auto t = toy("dog\tcanine\ncanine\tanimal\n", "dog\tdog\n");
  CHECK(t.node_count() == 3);
  CHECK(t.edge_count() == 2);
  CHECK(t.parents("dog") == std::vector<std::string>{"canine"});
}

TEST_CASE("cycles and dangling edges are rejected") {
  try {
    toy("a\tb\nb\ta\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("cycle detected at node") != std::string::npos);
  }
  CHECK_THROWS_AS(toy("a\ta\n"), Error);
  CHECK_THROWS_AS(toy("a\t\n"), Error);
  CHECK_THROWS_AS(toy("a\tb\n", "x\tnope\n"), Error);
  CHECK_THROWS_AS(toy("a\tb\n", "x\ta\nx\tb\n"), Error);
}

TEST_CASE("fixture taxonomy shape") {
  const auto& f = fixture();
  CHECK(f.taxonomy.node_count() == 40);
  REQUIRE(f.taxonomy.senses("truck"));
  CHECK(f.taxonomy.senses("truck")->front() == "truck.n.01");
  CHECK_NOTHROW(f.supercats.check_against(f.taxonomy));
  CHECK(f.supercats.names() == std::vector<std::string>{"person", "conveyance", "furniture",
                                                         "animal", "container", "food", "device"});
}

TEST_CASE("supercategory lookups") {
  const auto& f = fixture();
  CHECK(supercategory_of("sofa", f.taxonomy, f.supercats) == "furniture");
  const auto food = closest_supercategory("food", f.taxonomy, f.supercats);
  REQUIRE(food);
  CHECK(food->name == "food");
  CHECK(food->depth == 0);
  const auto lunch = closest_supercategory("lunchbox", f.taxonomy, f.supercats);
  REQUIRE(lunch);
  CHECK(lunch->name == "container");
  CHECK(lunch->depth == 2);
  // The second sense reaches device sooner but only the first sense counts.
  const auto truck = closest_supercategory("truck", f.taxonomy, f.supercats);
  REQUIRE(truck);
  CHECK(truck->name == "conveyance");
  CHECK(truck->depth == 3);
  CHECK_FALSE(supercategory_of("street", f.taxonomy, f.supercats));
  CHECK_FALSE(supercategory_of("unicorn", f.taxonomy, f.supercats));
  for (int i = 0; i < 3; ++i) CHECK(supercategory_of("bag", f.taxonomy, f.supercats) == "container");
}

TEST_CASE("equal depth ties go to the earlier supercategory") {
  const auto t = toy("x\tA\nx\tB\n", "x\tx\n");
  std::istringstream s1("b\tB\na\tA\n"), s2("a\tA\nb\tB\n");
  CHECK(supercategory_of("x", t, SupercategorySet::parse(s1)) == "b");
  CHECK(supercategory_of("x", t, SupercategorySet::parse(s2)) == "a");
}

TEST_CASE("supercategory names must be unique") {
  std::istringstream s("a\tA\na\tB\n");
  CHECK_THROWS_AS(SupercategorySet::parse(s), Error);
}

TEST_CASE("lemmatizer") {
  CHECK(lemmatize("dogs") == "dog");
  CHECK(lemmatize("boxes") == "box");
  CHECK(lemmatize("berries") == "berry");
  CHECK(lemmatize("glass") == "glass");
  const auto& f = fixture();
  CHECK(lemmatize("Sunglasses", &f.taxonomy) == "sunglasses");
  CHECK(lemmatize("lunchboxes", &f.taxonomy) == "lunchbox");
}

TEST_CASE("pretagged nouns") {
  TaggedCaption c{"x", {{"Two", "NUM"}, {"dogs", "NOUN"}, {"run", "VERB"}}};
  CHECK(extract_nouns_pretagged(c) == std::vector<std::string>{"dog"});
}

TEST_CASE("lexicon counts tokens, not types") {
  CHECK(extract_nouns_lexicon("a truck near the truck", fixture().taxonomy) ==
        std::vector<std::string>{"truck", "truck"});
}

TEST_CASE("twenty caption fixture matches the hand-tagged golden file") {
  const auto tagged = load_pretagged(testutil::data("termlens/fixture_pretagged.jsonl"));
  REQUIRE(tagged.size() == 20);
  std::map<std::string, std::vector<std::string>> golden;
  std::ifstream in(testutil::data("termlens/fixture_nouns_golden.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    std::istringstream words(line.substr(tab + 1));
    auto& v = golden[line.substr(0, tab)];
    for (std::string w; words >> w;) v.push_back(w);
  }
  REQUIRE(golden.size() == 20);
  std::vector<std::string> all_got, all_want;
  for (const auto& c : tagged) {
    auto got = extract_nouns_pretagged(c, &fixture().taxonomy);
    auto want = golden.at(c.caption_id);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK_MESSAGE(got == want, c.caption_id);
  }
}

TEST_CASE("pretagged file errors") {
  std::istringstream bad("{\"caption_id\":\"a\"}\n");
  CHECK_THROWS_AS(parse_pretagged(bad), Error);
}

TEST_CASE("empty corpus has zero counts") {
  const auto& f = fixture();
  const auto d = distribution({}, f.taxonomy, f.supercats);
  CHECK(d.total_nouns == 0);
  CHECK(d.supercategory_total() == 0);
  CHECK(d.count("furniture", "sofa") == 0);
}

TEST_CASE("threshold filters the report but not the counts") {
  const auto& f = fixture();
  std::vector<std::vector<std::string>> nouns(100, std::vector<std::string>{"sofa"});
  const auto d = distribution(nouns, f.taxonomy, f.supercats);
  CHECK(d.count("furniture", "sofa") == 100);
  for (const auto& [s, terms] : d.filtered(150)) CHECK(terms.empty());
  CHECK(d.filtered(99).at("furniture").at("sofa") == 100);
  CHECK(d.filtered(100).at("furniture").count("sofa") == 0);
}

TEST_CASE("aliases merge before counting") {
  const auto& f = fixture();
  std::vector<std::vector<std::string>> nouns{{"couch", "sofa", "couch"}};
  const auto d = distribution(nouns, f.taxonomy, f.supercats, f.aliases);
  CHECK(d.count("furniture", "sofa") == 3);
  CHECK(d.count("furniture", "couch") == 0);
}

TEST_CASE("conservation holds on every corpus") {
  const auto& f = fixture();
  std::vector<std::vector<std::string>> nouns{{"sofa", "street", "unicorn", "bread", "truck"},
                                              {"grass", "dog"}};
  const auto d = distribution(nouns, f.taxonomy, f.supercats);
  CHECK(d.total_nouns == 7);
  CHECK(d.unmapped_count == 2);
  CHECK(d.unmatched_count == 1);
  CHECK(d.supercategory_total() + d.unmapped_count + d.unmatched_count == d.total_nouns);
  for (const auto* lang : {"en", "ja"}) {
    const auto b = lexicon_distribution(lang);
    CHECK(b.supercategory_total() + b.unmapped_count + b.unmatched_count == b.total_nouns);
  }
}

TEST_CASE("bilingual ratios") {
  const auto en = lexicon_distribution("en");
  const auto ja = lexicon_distribution("ja");
  const auto ja_vs_en = compare(ja, en, 0);
  CHECK(std::abs(row(ja_vs_en, "bread").ratio - 2.8) <= 0.05);
  CHECK(std::abs(row(ja_vs_en, "sunglasses").ratio - 5.6) <= 0.05);
  const auto en_vs_ja = compare(en, ja, 0);
  CHECK(std::abs(row(en_vs_ja, "furniture").ratio - 4.2) <= 0.05);
}

TEST_CASE("compare identities and one-sided terms") {
  const auto en = lexicon_distribution("en");
  for (const auto& r : compare(en, en, 0)) CHECK(r.ratio == 1.0);
  const auto& f = fixture();
  std::vector<std::vector<std::string>> a{{"sofa", "bag"}}, b{{"sofa"}};
  const auto rows = compare(distribution(a, f.taxonomy, f.supercats),
                            distribution(b, f.taxonomy, f.supercats), 0);
  const auto& bag = row(rows, "bag");
  CHECK(bag.count_b == 0);
  CHECK(bag.flagged);
  CHECK(std::isinf(bag.ratio));
  CHECK(format_ratio(bag.ratio) == "inf");
  CHECK(format_ratio(4.2) == "4.20");
  CHECK(comparison_csv(rows, "container") == "term,count_a,count_b,ratio,flag\nbag,1,0,inf,zero_count\n");
}

TEST_CASE("compare uses the union above the threshold") {
  const auto& f = fixture();
  std::vector<std::vector<std::string>> a(5, {"sofa"}), b(5, {"chair"});
  a.push_back({"bag"});
  const auto rows = compare(distribution(a, f.taxonomy, f.supercats),
                            distribution(b, f.taxonomy, f.supercats), 2);
  CHECK(rows.size() == 2);
  CHECK(row(rows, "sofa").count_b == 0);
  CHECK(row(rows, "chair").count_a == 0);
}

TEST_CASE("compare rejects mismatched supercategories") {
  const auto& f = fixture();
  std::istringstream other("food\tfood.n.01\n");
  const auto a = distribution({}, f.taxonomy, f.supercats);
  const auto b = distribution({}, f.taxonomy, SupercategorySet::parse(other));
  CHECK_THROWS_AS(compare(a, b, 0), Error);
}

TEST_CASE("distribution json round-trips") {
  const auto en = lexicon_distribution("en");
  const auto text = distribution_json(en, 5);
  const auto back = distribution_from_json(text);
  CHECK(back.counts == en.counts);
  CHECK(back.total_nouns == en.total_nouns);
  CHECK(back.unmatched_count == en.unmatched_count);
  const auto j = nlohmann::json::parse(text);
  CHECK(j["report"]["food"]["bread"] == 10);
  CHECK_FALSE(j["report"]["device"].contains("sunglasses"));
}

}

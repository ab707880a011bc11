// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xrecap/config.hpp"
#include "xrecap/corpus.hpp"
#include "xrecap/eval.hpp"
#include "xrecap/manifest.hpp"
#include "xrecap/pipeline.hpp"
#include "xrecap/recaption.hpp"
#include "xrecap/refsel.hpp"
#include "xrecap/termlens.hpp"
#include "xrecap/trainer.hpp"

using namespace xrecap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  double limit_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

fs::path g_work;

fs::path data(const std::string& rel) { return fs::path(XRECAP_TEST_DATA) / rel; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Eigen::MatrixXd random_unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
    m.row(i).normalize();
  }
  return m;
}

// Rows drawn from a small palette so that exact similarity ties occur.
Eigen::MatrixXd tied_unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  const auto palette = random_unit_rows(std::max<Eigen::Index>(2, n / 4), d, rng);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    m.row(i) = palette.row(static_cast<Eigen::Index>(rng.index(palette.rows())));
  }
  return m;
}

double loop_loss(const Eigen::MatrixXd& t, const Eigen::MatrixXd& v, double tau) {
  const auto n = t.rows();
  double i2t = 0, t2i = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double row = 0, col = 0;
    for (Eigen::Index b = 0; b < n; ++b) {
      row += std::exp(t.row(a).dot(v.row(b)) / tau);
      col += std::exp(t.row(b).dot(v.row(a)) / tau);
    }
    t2i -= t.row(a).dot(v.row(a)) / tau - std::log(row);
    i2t -= t.row(a).dot(v.row(a)) / tau - std::log(col);
  }
  return 0.5 * (i2t + t2i) / static_cast<double>(n);
}

Outcome ac1() {
  double worst = 0;
  Rng rng(1);
  for (int n : {2, 8, 64}) {
    const Eigen::MatrixXd one = random_unit_rows(1, 16, rng);
    const Eigen::MatrixXd t = one.replicate(n, 1);
    const Eigen::MatrixXd v = random_unit_rows(1, 16, rng).replicate(n, 1);
    worst = std::max(worst, std::abs(contrastive_loss(t, v, 0.07).loss - std::log(n)));
  }
  return {worst <= 1e-6, "max |loss - ln N| = " + fmt("%.2e", worst)};
}

Outcome ac2() {
  Rng rng(2);
  const double tau = 0.07, h = 1e-5;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_unit_rows(8, 16, rng);
    const auto v = random_unit_rows(8, 16, rng);
    const auto g = contrastive_loss(t, v, tau).text_gradient;
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        Eigen::MatrixXd p = t, m = t;
        p(i, j) += h;
        m(i, j) -= h;
        const double fd = (loop_loss(p, v, tau) - loop_loss(m, v, tau)) / (2 * h);
        const double denom = std::max({1e-8, std::abs(fd), std::abs(g(i, j))});
        worst = std::max(worst, std::abs(fd - g(i, j)) / denom);
      }
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst)};
}

Outcome ac3() {
  constexpr int draws = 100000;
  std::ostringstream detail;
  bool ok = true;
  for (std::size_t n : {1u, 3u}) {
    AugmentationPool pool;
    pool.original = Eigen::VectorXd::Zero(2);
    pool.rewrites.assign(n, Eigen::VectorXd::Zero(2));
    std::vector<int> hits(pool.size(), 0);
    Rng rng(3 + n);
    for (int i = 0; i < draws; ++i) ++hits[sample_positive_index(pool, rng)];
    const double expected = 1.0 / static_cast<double>(pool.size());
    detail << "n=" << n << ":";
    for (int h : hits) {
      const double f = static_cast<double>(h) / draws;
      ok = ok && std::abs(f - expected) <= 0.01;
      detail << " " << fmt("%.4f", f);
    }
    detail << (n == 1 ? "; " : "");
  }
  return {ok, detail.str()};
}

Outcome ac4() {
  Rng rng(4);
  int mismatches = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(63));
    const auto d = static_cast<Eigen::Index>(2 + rng.index(31));
    const auto rows = inst % 2 ? tied_unit_rows(n, d, rng) : random_unit_rows(n, d, rng);
    EmbeddingStore store(static_cast<std::size_t>(d));
    std::vector<std::string> ids;
    for (Eigen::Index i = 0; i < n; ++i) {
      ids.push_back("r" + std::to_string(i));
      const Eigen::VectorXd r = rows.row(i).transpose();
      store.add(ids.back(), std::span<const double>(r.data(), static_cast<std::size_t>(d)));
    }
    const auto index = NnIndex::build(store, ids);
    const Eigen::VectorXd q = inst % 3 ? Eigen::VectorXd(rows.row(static_cast<Eigen::Index>(rng.index(n))).transpose())
                                       : Eigen::VectorXd(random_unit_rows(1, d, rng).row(0).transpose());
    const std::size_t k = 1 + rng.index(static_cast<std::size_t>(n));

    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t i = 0; i < store.size(); ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < store.dim(); ++j) dot += static_cast<double>(store.row(i)[j]) * q(static_cast<Eigen::Index>(j));
      sims.emplace_back(dot, i);
    }
    std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    const auto got = index.query(std::span<const double>(q.data(), static_cast<std::size_t>(d)), k);
    bool same = got.size() == k;
    for (std::size_t i = 0; same && i < k; ++i) same = got[i].image_id == ids[sims[i].second];
    mismatches += same ? 0 : 1;
  }
  return {mismatches == 0, std::to_string(mismatches) + "/200 instances differ from brute force"};
}

Outcome ac5() {
  Rng rng(5);
  int mismatches = 0, violations = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto nq = static_cast<Eigen::Index>(1 + rng.index(40));
    const auto ng = static_cast<Eigen::Index>(1 + rng.index(40));
    const auto d = static_cast<Eigen::Index>(2 + rng.index(15));
    VectorTable q, g;
    q.rows = random_unit_rows(nq, d, rng);
    g.rows = inst % 2 ? tied_unit_rows(ng, d, rng) : random_unit_rows(ng, d, rng);
    for (Eigen::Index i = 0; i < nq; ++i) q.ids.push_back("q" + std::to_string(i));
    for (Eigen::Index i = 0; i < ng; ++i) g.ids.push_back("g" + std::to_string(i));
    std::map<std::string, std::string, std::less<>> gold;
    std::vector<Eigen::Index> gold_idx;
    for (Eigen::Index i = 0; i < nq; ++i) {
      gold_idx.push_back(static_cast<Eigen::Index>(rng.index(ng)));
      gold[q.ids[i]] = g.ids[gold_idx.back()];
    }
    const auto got = rank_all(q, g, gold);
    for (Eigen::Index i = 0; i < nq; ++i) {
      std::vector<Eigen::Index> order(ng);
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> sim(ng);
      for (Eigen::Index j = 0; j < ng; ++j) sim[j] = g.rows.row(j).dot(q.rows.row(i));
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return sim[a] != sim[b] ? sim[a] > sim[b] : a < b; });
      const auto rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), gold_idx[i]) - order.begin()) + 1;
      bool same = got[i].rank_of_gold == rank && got[i].ranked_gallery_ids.size() == order.size();
      for (std::size_t j = 0; same && j < order.size(); ++j) same = got[i].ranked_gallery_ids[j] == g.ids[order[j]];
      mismatches += same ? 0 : 1;
    }
    const auto r = recall_report(got, got);
    const double six = (r.i2t_r1 + r.i2t_r5 + r.i2t_r10 + r.t2i_r1 + r.t2i_r5 + r.t2i_r10) / 6.0;
    const bool monotone = r.i2t_r1 <= r.i2t_r5 && r.i2t_r5 <= r.i2t_r10 &&
                          r.t2i_r1 <= r.t2i_r5 && r.t2i_r5 <= r.t2i_r10;
    violations += monotone && std::abs(r.mean_recall - six) < 1e-12 ? 0 : 1;
  }
  return {mismatches == 0 && violations == 0,
          std::to_string(mismatches) + " rank mismatches, " + std::to_string(violations) + " report violations"};
}

Outcome ac6() {
  const std::size_t native[30] = {1, 5, 10, 11, 2, 30, 7, 10, 1, 12, 3, 4, 9, 15, 6,
                                  1, 20, 10, 8, 2, 11, 1, 5, 9, 14, 3, 10, 2, 25, 6};
  const std::size_t mt[30] = {11, 4, 11, 12, 10, 40, 50, 10, 1, 30, 13, 2, 11, 3, 20,
                              100, 11, 9, 12, 11, 20, 10, 6, 15, 2, 11, 30, 1, 26, 10};
  const std::vector<std::string> expected{"q00", "q02", "q06", "q10", "q12", "q14",
                                          "q15", "q18", "q19", "q23", "q25", "q26"};
  std::vector<RankingResult> nat, base;
  for (int i = 0; i < 30; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "q%02d", i);
    nat.push_back({id, {}, native[i]});
    base.push_back({id, {}, mt[i]});
  }
  const auto i2t = build_error_set(nat, base, Direction::i2t);
  const auto t2i = build_error_set(nat, base, Direction::t2i);
  const auto r = restricted_report(base, base, i2t, t2i);
  const bool zeros = r.i2t_r1 == 0 && r.i2t_r5 == 0 && r.i2t_r10 == 0 &&
                     r.t2i_r1 == 0 && r.t2i_r5 == 0 && r.t2i_r10 == 0;
  const bool members = i2t.member_ids == expected && t2i.member_ids == expected;
  return {members && zeros, std::to_string(i2t.member_ids.size()) + " members (12 expected); MT on own set: " +
                                format_one_decimal(r.mean_recall)};
}

PipelineConfig synthetic_config(std::uint64_t seed, const fs::path& out) {
  auto c = load_config(fs::path(XRECAP_SOURCE_DIR) / "configs" / "synthetic.toml");
  c.seed = c.split_seed = c.refsel.seed = c.train.seed = c.synth.seed = seed;
  c.output_dir = out;
  return c;
}

double mean_recall_of(const fs::path& root, const std::string& variant) {
  const auto j = nlohmann::json::parse(read_file(Workspace{root}.eval_dir(variant) / "report.json"));
  return j.at("mean").at("mean_recall").get<double>();
}

Outcome ac7() {
  bool ok = true;
  std::ostringstream detail;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    const auto out = g_work / ("ac7_seed" + std::to_string(seed));
    fs::remove_all(out);
    Pipeline(synthetic_config(seed, out)).run_all();
    const double un = mean_recall_of(out, "untrained");
    const double m = mean_recall_of(out, "mt");
    const double a = mean_recall_of(out, "aug");
    ok = ok && a - m >= 2.0 && m > un;
    detail << "seed " << seed << ": untrained " << format_one_decimal(un) << ", mt "
           << format_one_decimal(m) << ", aug " << format_one_decimal(a) << "; ";
  }
  auto s = detail.str();
  return {ok, s.substr(0, s.size() - 2)};
}

Outcome ac8() {
  const std::string input = "Two dogs run across a snowy field.";
  GuidanceExample g;
  g.input_caption.text = "A man rides a bicycle down the road.";
  g.output_caption.text = "A cyclist in a red jacket rides along the road.";
  int mismatched = 0;
  const std::pair<RewriteStrategy, const char*> cases[] = {
      {RewriteStrategy::paraphrase, "golden/prompt_paraphrase.txt"},
      {RewriteStrategy::diverse_recaption, "golden/prompt_diverse.txt"},
      {RewriteStrategy::targeted_recaption, "golden/prompt_targeted.txt"}};
  for (const auto& [s, file] : cases) {
    const auto rendered = render_prompt(s, input, s == RewriteStrategy::targeted_recaption ? &g : nullptr);
    mismatched += rendered == read_file(data(file)) ? 0 : 1;
  }
  Rng rng(8);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABCDEFXYZ0123456789.,;:'\"-!?()/&";
  int roundtrip_failures = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    const auto len = 1 + rng.index(80);
    for (std::size_t j = 0; j < len; ++j) s.push_back(alphabet[rng.index(alphabet.size())]);
    if (rng.index(4) == 0) s += " \xe6\xb5\x9c\xe8\xbe\xba";
    s = trim(s);
    if (s.empty()) s = "x";
    roundtrip_failures += parse_final(wrap_final(s)) == s ? 0 : 1;
  }
  return {mismatched == 0 && roundtrip_failures == 0,
          std::to_string(3 - mismatched) + "/3 golden prompts match, " +
              std::to_string(roundtrip_failures) + "/1000 round-trip failures"};
}

Outcome ac9() {
  bool identical = true;
  for (auto v : kAllRougeVariants) identical = identical && rouge("a dog on the beach", "a dog on the beach", v) == 1.0;
  const double r1 = rouge("the cat sat", "the cat ran", RougeVariant::r1);
  const double rl = rouge("the cat sat", "the cat ran", RougeVariant::rL);
  const bool hand = std::abs(r1 - 2.0 / 3.0) <= 1e-9 && std::abs(rl - 2.0 / 3.0) <= 1e-9;
  const auto refs = ingest_captions(data("rouge/references.jsonl"));
  const auto near = rouge_corpus(ingest_captions(data("rouge/near_copy.jsonl")), refs);
  const auto shuf = rouge_corpus(ingest_captions(data("rouge/shuffled.jsonl")), refs);
  bool ordered = true;
  for (const auto& [name, f] : near.mean_f1) ordered = ordered && f > shuf.mean_f1.at(name);
  return {identical && hand && ordered,
          "r1 " + fmt("%.9f", r1) + ", rL " + fmt("%.9f", rl) + ", near-copy rougeL " +
              fmt("%.3f", near.mean_f1.at("rougeL")) + " vs shuffled " + fmt("%.3f", shuf.mean_f1.at("rougeL"))};
}

Outcome ac10() {
  const auto taxonomy = Taxonomy::load(data("termlens/edges.tsv"), data("termlens/lemmas.tsv"));
  const auto supercats = SupercategorySet::load(data("termlens/supercategories.tsv"));
  const auto aliases = load_aliases(data("termlens/aliases.tsv"));
  const auto captions = ingest_captions(data("termlens/bilingual_captions.jsonl"));
  std::map<std::string, TermDistribution> dist;
  bool conserved = true;
  for (const auto* lang : {"en", "ja"}) {
    std::vector<std::vector<std::string>> nouns;
    for (const auto& c : captions) {
      if (c.lang.code() == lang) nouns.push_back(extract_nouns_lexicon(c.text, taxonomy));
    }
    const auto d = distribution(nouns, taxonomy, supercats, aliases);
    conserved = conserved && d.supercategory_total() + d.unmapped_count + d.unmatched_count == d.total_nouns;
    dist.emplace(lang, d);
  }
  std::map<std::string, double> ratio;
  for (const auto& r : compare(dist.at("ja"), dist.at("en"), 0)) ratio[r.term] = r.ratio;
  const double bread = ratio.count("bread") ? ratio["bread"] : 0.0;
  const double sun = ratio.count("sunglasses") ? ratio["sunglasses"] : 0.0;
  const bool ok = conserved && std::abs(bread - 2.8) <= 0.05 && std::abs(sun - 5.6) <= 0.05;
  return {ok, std::string(conserved ? "conserved" : "NOT conserved") + ", bread " + fmt("%.2f", bread) +
                  ", sunglasses " + fmt("%.2f", sun)};
}

Outcome ac11() {
  const auto a = g_work / "ac11_a";
  const auto b = g_work / "ac11_b";
  for (const auto& out : {a, b}) {
    fs::remove_all(out);
    Pipeline(synthetic_config(7, out)).run_all();
  }
  std::vector<fs::path> files;
  for (const auto* v : {"untrained", "mt", "aug", "native"}) {
    files.push_back(fs::path("eval") / v / "report.json");
    files.push_back(fs::path("eval") / v / "report.csv");
    files.push_back(fs::path("train") / v / "head.xrc");
  }
  files.push_back(fs::path("eval") / "errorsets" / "restricted.json");
  for (const auto& e : fs::recursive_directory_iterator(a / "recap")) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  std::size_t differing = 0;
  for (const auto& f : files) differing += read_file(a / f) == read_file(b / f) ? 0 : 1;
  const auto ma = nlohmann::json::parse(read_file(Workspace{a}.manifest("pipeline-all")))["outputs"];
  const auto mb = nlohmann::json::parse(read_file(Workspace{b}.manifest("pipeline-all")))["outputs"];
  return {differing == 0 && ma == mb,
          std::to_string(files.size() - differing) + "/" + std::to_string(files.size()) +
              " files identical, " + std::to_string(ma.size()) + " manifest outputs " +
              (ma == mb ? "equal" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xrecap acceptance suite"};
  std::string work = (fs::temp_directory_path() / "xrecap_acceptance").string();
  std::vector<std::string> only;
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria (e.g. AC7)");
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {"AC1", 1, ac1},   {"AC2", 10, ac2}, {"AC3", 0, ac3},  {"AC4", 5, ac4},
      {"AC5", 0, ac5},   {"AC6", 0, ac6},  {"AC7", 120, ac7}, {"AC8", 0, ac8},
      {"AC9", 0, ac9},   {"AC10", 0, ac10}, {"AC11", 0, ac11}};

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0 && s >= c.limit_s) {
      o.pass = false;
      o.detail += "; runtime limit " + fmt("%.0f", c.limit_s) + " s exceeded";
    }
    failed += o.pass ? 0 : 1;
    std::cout << c.id << (o.pass ? " PASS " : " FAIL ") << o.detail << " (" << fmt("%.2f", s) << " s)"
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

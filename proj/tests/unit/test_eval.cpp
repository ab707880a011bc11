#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "util.hpp"
#include "xrecap/eval.hpp"
#include "xrecap/pipeline.hpp"

using namespace xrecap;

namespace {

std::vector<RankingResult> ranks(const std::vector<std::size_t>& r, const std::string& prefix = "q") {
  std::vector<RankingResult> out;
  for (std::size_t i = 0; i < r.size(); ++i) out.push_back({prefix + std::to_string(i), {}, r[i]});
  return out;
}

VectorTable table(const Eigen::MatrixXd& m, const std::string& prefix) {
  VectorTable t;
  t.rows = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) t.ids.push_back(prefix + std::to_string(i));
  return t;
}

// Rank of the gold item: 1 + number of items that sort strictly ahead of it
// under (similarity desc, index asc).
std::size_t oracle_rank(const Eigen::VectorXd& q, const Eigen::MatrixXd& g, Eigen::Index gold) {
  std::vector<Eigen::Index> order(g.rows());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sim(g.rows());
  for (Eigen::Index i = 0; i < g.rows(); ++i) sim[i] = g.row(i).dot(q);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    return sim[a] != sim[b] ? sim[a] > sim[b] : a < b;
  });
  return std::size_t(std::find(order.begin(), order.end(), gold) - order.begin()) + 1;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("single-item gallery ranks everything first") {
  Rng rng(1);
  const auto q = table(testutil::random_unit_rows(5, 4, rng), "q");
  const auto g = table(testutil::random_unit_rows(1, 4, rng), "g");
  std::map<std::string, std::string, std::less<>> gold;
  for (const auto& id : q.ids) gold[id] = "g0";
  for (const auto& r : rank_all(q, g, gold)) CHECK(r.rank_of_gold == 1);
}

TEST_CASE("query equal to its gold with orthogonal distractors is rank 1") {
  const Eigen::MatrixXd g = Eigen::MatrixXd::Identity(4, 4);
  const auto gt = table(g, "g");
  const auto qt = table(g.topRows(1), "q");
  const auto r = rank_all(qt, gt, {{"q0", "g0"}});
  CHECK(r[0].rank_of_gold == 1);
  CHECK(r[0].ranked_gallery_ids.front() == "g0");
}

TEST_CASE("rank_all equals the sort oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto qm = testutil::random_unit_rows(50, 8, rng);
    const auto gm = testutil::random_unit_rows(64, 8, rng);
    std::map<std::string, std::string, std::less<>> gold;
    std::vector<Eigen::Index> gold_idx;
    for (int i = 0; i < 50; ++i) {
      gold_idx.push_back(Eigen::Index(rng.index(64)));
      gold["q" + std::to_string(i)] = "g" + std::to_string(gold_idx.back());
    }
    const auto r = rank_all(table(qm, "q"), table(gm, "g"), gold);
    for (int i = 0; i < 50; ++i) CHECK(r[i].rank_of_gold == oracle_rank(qm.row(i).transpose(), gm, gold_idx[i]));
  }
}

TEST_CASE("rank_all errors") {
  const Eigen::MatrixXd g = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(rank_all(table(g, "q"), table(g, "g"), {{"q0", "g0"}}), Error);
  CHECK_THROWS_AS(rank_all(table(g.leftCols(2), "q"), table(g, "g"),
                           {{"q0", "g0"}, {"q1", "g1"}, {"q2", "g2"}}),
                  Error);
  CHECK_THROWS_AS(rank_all(table(g, "q"), table(g, "g"), {{"q0", "g0"}, {"q1", "g1"}, {"q2", "zz"}}),
                  Error);
}

TEST_CASE("all first ranks give 100") {
  const auto r = recall_report(ranks({1, 1, 1}), ranks({1, 1}));
  CHECK(r.i2t_r1 == 100);
  CHECK(r.t2i_r10 == 100);
  CHECK(r.mean_recall == 100);
  CHECK(r.i2t_queries == 3);
  CHECK(r.t2i_queries == 2);
}

TEST_CASE("hand-built ten-query instance") {
  const auto q = ranks({1, 2, 3, 6, 7, 11, 12, 20, 4, 5});
  CHECK(recall_at(q, 1) == doctest::Approx(10));
  CHECK(recall_at(q, 5) == doctest::Approx(50));
  CHECK(recall_at(q, 10) == doctest::Approx(70));
}

TEST_CASE("mean recall is the arithmetic mean of the six scores") {
  const auto r = make_report(10.2, 25.0, 33.9, 9.2, 23.2, 31.9);
  CHECK(r.mean_recall == doctest::Approx(133.4 / 6).epsilon(1e-12));
  CHECK(format_one_decimal(r.mean_recall) == "22.2");
  CHECK(format_one_decimal(22.96) == "23.0");
  CHECK(format_one_decimal(22.94) == "22.9");
}

TEST_CASE("reports are monotone with a consistent mean") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> a, b;
    for (int i = 0; i < 30; ++i) {
      a.push_back(1 + rng.index(40));
      b.push_back(1 + rng.index(40));
    }
    const auto r = recall_report(ranks(a), ranks(b));
    CHECK(r.i2t_r1 <= r.i2t_r5);
    CHECK(r.i2t_r5 <= r.i2t_r10);
    CHECK(r.t2i_r1 <= r.t2i_r5);
    CHECK(r.t2i_r5 <= r.t2i_r10);
    const double mean = (r.i2t_r1 + r.i2t_r5 + r.i2t_r10 + r.t2i_r1 + r.t2i_r5 + r.t2i_r10) / 6;
    CHECK(std::abs(r.mean_recall - mean) < 1e-9);
  }
}

TEST_CASE("error set membership") {
  const auto native = ranks({3, 11, 10, 1});
  const auto mt = ranks({15, 50, 11, 10});
  const auto s = build_error_set(native, mt, Direction::i2t);
  CHECK(s.contains("q0"));
  CHECK_FALSE(s.contains("q1"));
  CHECK(s.contains("q2"));
  CHECK_FALSE(s.contains("q3"));
  CHECK_THROWS_AS(build_error_set(native, ranks({1, 2, 3, 4}, "x"), Direction::i2t), Error);
}

TEST_CASE("error set is the literal conjunction on random pairs") {
  Rng rng(4);
  std::vector<std::size_t> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(1 + rng.index(25));
    b.push_back(1 + rng.index(25));
  }
  const auto s = build_error_set(ranks(a), ranks(b), Direction::t2i);
  for (int i = 0; i < 500; ++i) {
    CHECK(s.contains("q" + std::to_string(i)) == (a[i] <= 10 && b[i] > 10));
  }
}

TEST_CASE("restricted report") {
  const auto i2t = ranks({1, 5, 10, 11});
  const auto t2i = ranks({2, 3, 20, 1});
  ErrorSet all_i{Direction::i2t, {"q0", "q1", "q2", "q3"}};
  ErrorSet all_t{Direction::t2i, {"q0", "q1", "q2", "q3"}};
  CHECK(restricted_report(i2t, t2i, all_i, all_t) == recall_report(i2t, t2i));
  ErrorSet one{Direction::i2t, {"q2"}};
  const auto r = restricted_report(i2t, t2i, one, all_t);
  CHECK(r.i2t_r5 == 0);
  CHECK(r.i2t_r10 == 100);
  CHECK_THROWS_AS(restricted_report(i2t, t2i, ErrorSet{Direction::i2t, {}}, all_t), Error);
}

TEST_CASE("serialization") {
  const auto r = make_report(10.25, 20, 30, 40, 50, 60.04);
  CHECK(report_from_json(report_to_json(r)) == r);
  const std::vector<std::pair<std::string, RetrievalReport>> rows{{"a", r}};
  const auto csv = reports_to_csv(rows);
  CHECK(csv.find("a,10.2,20.0,30.0,40.0,50.0,60.0,35.0") != std::string::npos);
  ErrorSet s{Direction::t2i, {"a", "b"}};
  const auto back = error_set_from_json(error_set_to_json(s));
  CHECK(back.direction == Direction::t2i);
  CHECK(back.member_ids == s.member_ids);
}

TEST_CASE("rouge basics") {
  for (auto v : kAllRougeVariants) {
    CHECK(rouge("a man rides a red bicycle down the street", "a man rides a red bicycle down the street", v) == 1.0);
    CHECK(rouge("alpha beta gamma delta", "one two three four", v) == 0.0);
  }
  CHECK(std::abs(rouge("the cat sat", "the cat ran", RougeVariant::r1) - 2.0 / 3) < 1e-9);
  CHECK(std::abs(rouge("the cat sat", "the cat ran", RougeVariant::rL) - 2.0 / 3) < 1e-9);
  CHECK(std::abs(rouge("the cat sat", "the cat ran", RougeVariant::r2) - 0.5) < 1e-9);
  CHECK(rouge("the cat sat", "the cat ran", RougeVariant::r3) == 0.0);
  CHECK(rouge("", "x", RougeVariant::r1) == 0.0);
  CHECK(rouge("a b", "a b", RougeVariant::r4) == 0.0);
}

TEST_CASE("rouge tokens") {
  CHECK(rouge_tokens("The Cat, sat!") == std::vector<std::string>{"the", "cat", "sat"});
  CHECK(rouge_tokens("弁当 box") == std::vector<std::string>{"弁当", "box"});
}

TEST_CASE("rouge clips repeated n-grams") {
  // Candidate "the the the" vs "the cat": clipped overlap 1, P = 1/3, R = 1/2.
  CHECK(rouge("the the the", "the cat", RougeVariant::r1) == doctest::Approx(0.4));
}

TEST_CASE("rouge is symmetric") {
  Rng rng(5);
  const std::vector<std::string> vocab{"a", "dog", "cat", "on", "the", "mat", "runs", "red"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string x, y;
    for (std::size_t i = 0, n = 1 + rng.index(8); i < n; ++i) x += vocab[rng.index(vocab.size())] + " ";
    for (std::size_t i = 0, n = 1 + rng.index(8); i < n; ++i) y += vocab[rng.index(vocab.size())] + " ";
    for (auto v : kAllRougeVariants) CHECK(rouge(x, y, v) == doctest::Approx(rouge(y, x, v)).epsilon(1e-12));
  }
}

TEST_CASE("rouge ordering on the captioning fixture") {
  const auto refs = ingest_captions(testutil::data("rouge/references.jsonl"));
  const auto near = rouge_corpus(ingest_captions(testutil::data("rouge/near_copy.jsonl")), refs);
  const auto shuffled = rouge_corpus(ingest_captions(testutil::data("rouge/shuffled.jsonl")), refs);
  for (auto v : kAllRougeVariants) {
    const std::string name(to_string(v));
    CHECK(near.mean_f1.at(name) > shuffled.mean_f1.at(name));
  }
}

TEST_CASE("variant names") {
  CHECK(rouge_variant_from_string("rougeL") == RougeVariant::rL);
  CHECK(rouge_variant_from_string("rouge2") == RougeVariant::r2);
  CHECK_THROWS_AS(rouge_variant_from_string("rouge9"), Error);
}

}

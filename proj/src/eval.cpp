#include "xrecap/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace xrecap {

VectorTable table_from_store(const EmbeddingStore& store,
                             std::span<const std::string> ids) {
  VectorTable t;
  t.ids.assign(ids.begin(), ids.end());
  t.rows.resize(static_cast<Eigen::Index>(ids.size()),
                static_cast<Eigen::Index>(store.dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto v = store.vector(ids[i]);
    for (std::size_t j = 0; j < v.size(); ++j) {
      t.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
  }
  return t;
}

VectorTable project_table(const ProjectionHead& head, const VectorTable& table) {
  return {table.ids, head.project_rows(table.rows)};
}

std::vector<RankingResult> rank_all(
    const VectorTable& queries, const VectorTable& gallery,
    const std::map<std::string, std::string, std::less<>>& gold) {
  if (queries.size() > 0 && gallery.size() > 0 && queries.dim() != gallery.dim()) {
    throw Error(ErrorClass::validation,
                "query dim " + std::to_string(queries.dim()) +
                    " does not match gallery dim " +
                    std::to_string(gallery.dim()));
  }
  std::unordered_map<std::string, std::size_t> gallery_pos;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (!gallery_pos.emplace(gallery.ids[i], i).second) {
      throw Error(ErrorClass::validation,
                  "duplicate gallery id '" + gallery.ids[i] + "'");
    }
  }
  std::vector<std::size_t> gold_index(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto g = gold.find(queries.ids[q]);
    if (g == gold.end()) {
      throw Error(ErrorClass::not_found,
                  "no gold item for query '" + queries.ids[q] + "'");
    }
    auto pos = gallery_pos.find(g->second);
    if (pos == gallery_pos.end()) {
      throw Error(ErrorClass::not_found,
                  "gold item '" + g->second + "' of query '" + queries.ids[q] +
                      "' is not in the gallery");
    }
    gold_index[q] = pos->second;
  }

  // Sequential per-pair sums: identical gallery rows tie exactly.
  const auto dim = static_cast<Eigen::Index>(queries.dim());
  Eigen::MatrixXd sims(queries.rows.rows(), gallery.rows.rows());
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    for (Eigen::Index j = 0; j < sims.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < dim; ++k) s += queries.rows(i, k) * gallery.rows(j, k);
      sims(i, j) = s;
    }
  }
  std::vector<RankingResult> out(queries.size());
  std::vector<std::size_t> order(gallery.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto row = static_cast<Eigen::Index>(q);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = sims(row, static_cast<Eigen::Index>(a));
      const double sb = sims(row, static_cast<Eigen::Index>(b));
      if (sa != sb) return sa > sb;
      return a < b;
    });
    RankingResult& r = out[q];
    r.query_id = queries.ids[q];
    r.ranked_gallery_ids.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      r.ranked_gallery_ids.push_back(gallery.ids[order[i]]);
      if (order[i] == gold_index[q]) r.rank_of_gold = i + 1;
    }
  }
  return out;
}

double recall_at(std::span<const RankingResult> rankings, std::size_t k) {
  if (rankings.empty()) return 0.0;
  const auto hits = std::count_if(
      rankings.begin(), rankings.end(),
      [k](const RankingResult& r) { return r.rank_of_gold <= k; });
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(rankings.size());
}

RetrievalReport make_report(double i2t_r1, double i2t_r5, double i2t_r10,
                            double t2i_r1, double t2i_r5, double t2i_r10) {
  RetrievalReport r;
  r.i2t_r1 = i2t_r1;
  r.i2t_r5 = i2t_r5;
  r.i2t_r10 = i2t_r10;
  r.t2i_r1 = t2i_r1;
  r.t2i_r5 = t2i_r5;
  r.t2i_r10 = t2i_r10;
  r.mean_recall = (i2t_r1 + i2t_r5 + i2t_r10 + t2i_r1 + t2i_r5 + t2i_r10) / 6.0;
  return r;
}

RetrievalReport recall_report(std::span<const RankingResult> i2t,
                              std::span<const RankingResult> t2i) {
  if (i2t.empty() || t2i.empty()) {
    throw Error(ErrorClass::validation, "recall report needs rankings in both directions");
  }
  RetrievalReport r = make_report(recall_at(i2t, 1), recall_at(i2t, 5),
                                  recall_at(i2t, 10), recall_at(t2i, 1),
                                  recall_at(t2i, 5), recall_at(t2i, 10));
  r.i2t_queries = i2t.size();
  r.t2i_queries = t2i.size();
  return r;
}

RetrievalReport mean_report(std::span<const RetrievalReport> reports) {
  if (reports.empty()) {
    throw Error(ErrorClass::validation, "no reports to average");
  }
  double f[6] = {0, 0, 0, 0, 0, 0};
  std::size_t nq_i2t = 0, nq_t2i = 0;
  for (const auto& r : reports) {
    f[0] += r.i2t_r1;
    f[1] += r.i2t_r5;
    f[2] += r.i2t_r10;
    f[3] += r.t2i_r1;
    f[4] += r.t2i_r5;
    f[5] += r.t2i_r10;
    nq_i2t += r.i2t_queries;
    nq_t2i += r.t2i_queries;
  }
  const double n = static_cast<double>(reports.size());
  RetrievalReport out =
      make_report(f[0] / n, f[1] / n, f[2] / n, f[3] / n, f[4] / n, f[5] / n);
  out.i2t_queries = nq_i2t;
  out.t2i_queries = nq_t2i;
  return out;
}

std::string_view to_string(Direction d) {
  return d == Direction::i2t ? "i2t" : "t2i";
}

Direction direction_from_string(std::string_view name) {
  if (name == "i2t") return Direction::i2t;
  if (name == "t2i") return Direction::t2i;
  throw Error(ErrorClass::validation,
              "unknown direction '" + std::string(name) + "'");
}

bool ErrorSet::contains(std::string_view id) const {
  return std::binary_search(member_ids.begin(), member_ids.end(), id);
}

ErrorSet build_error_set(std::span<const RankingResult> native,
                         std::span<const RankingResult> mt,
                         Direction direction) {
  std::map<std::string_view, std::size_t> mt_rank;
  for (const auto& r : mt) mt_rank.emplace(r.query_id, r.rank_of_gold);
  if (mt_rank.size() != native.size()) {
    throw Error(ErrorClass::validation,
                "native and MT rankings cover different query sets (" +
                    std::to_string(native.size()) + " vs " +
                    std::to_string(mt.size()) + " queries)");
  }
  ErrorSet set;
  set.direction = direction;
  for (const auto& r : native) {
    auto it = mt_rank.find(r.query_id);
    if (it == mt_rank.end()) {
      throw Error(ErrorClass::validation,
                  "query '" + r.query_id + "' is missing from the MT rankings");
    }
    if (r.rank_of_gold <= 10 && it->second > 10) {
      set.member_ids.push_back(r.query_id);
    }
  }
  std::sort(set.member_ids.begin(), set.member_ids.end());
  return set;
}

namespace {

std::vector<RankingResult> restrict_to(std::span<const RankingResult> all,
                                       const ErrorSet& set) {
  if (set.member_ids.empty()) {
    throw Error(ErrorClass::validation,
                "empty " + std::string(to_string(set.direction)) + " error set");
  }
  std::vector<RankingResult> out;
  for (const auto& r : all) {
    if (set.contains(r.query_id)) out.push_back(r);
  }
  if (out.size() != set.member_ids.size()) {
    throw Error(ErrorClass::validation,
                std::string(to_string(set.direction)) +
                    " error set has members without a ranking");
  }
  return out;
}

}  // namespace

RetrievalReport restricted_report(std::span<const RankingResult> i2t,
                                  std::span<const RankingResult> t2i,
                                  const ErrorSet& i2t_set,
                                  const ErrorSet& t2i_set) {
  return recall_report(restrict_to(i2t, i2t_set), restrict_to(t2i, t2i_set));
}

std::string format_one_decimal(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", value);
  return buf;
}

std::string report_to_json(const RetrievalReport& r) {
  nlohmann::ordered_json j;
  j["i2t_r1"] = r.i2t_r1;
  j["i2t_r5"] = r.i2t_r5;
  j["i2t_r10"] = r.i2t_r10;
  j["t2i_r1"] = r.t2i_r1;
  j["t2i_r5"] = r.t2i_r5;
  j["t2i_r10"] = r.t2i_r10;
  j["mean_recall"] = r.mean_recall;
  j["i2t_queries"] = r.i2t_queries;
  j["t2i_queries"] = r.t2i_queries;
  return j.dump(2) + "\n";
}

RetrievalReport report_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RetrievalReport r = make_report(
        j.at("i2t_r1").get<double>(), j.at("i2t_r5").get<double>(),
        j.at("i2t_r10").get<double>(), j.at("t2i_r1").get<double>(),
        j.at("t2i_r5").get<double>(), j.at("t2i_r10").get<double>());
    r.mean_recall = j.at("mean_recall").get<double>();
    r.i2t_queries = j.value("i2t_queries", std::size_t{0});
    r.t2i_queries = j.value("t2i_queries", std::size_t{0});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::parse, std::string("report: ") + e.what());
  }
}

std::string reports_to_csv(
    std::span<const std::pair<std::string, RetrievalReport>> rows) {
  std::ostringstream out;
  out << "name,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,mean_recall\n";
  for (const auto& [name, r] : rows) {
    out << name;
    for (double v : {r.i2t_r1, r.i2t_r5, r.i2t_r10, r.t2i_r1, r.t2i_r5,
                     r.t2i_r10, r.mean_recall}) {
      out << ',' << format_one_decimal(v);
    }
    out << '\n';
  }
  return out.str();
}

std::string error_set_to_json(const ErrorSet& set) {
  nlohmann::ordered_json j;
  j["direction"] = to_string(set.direction);
  j["count"] = set.member_ids.size();
  j["member_ids"] = set.member_ids;
  return j.dump(2) + "\n";
}

ErrorSet error_set_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ErrorSet set;
    set.direction = direction_from_string(j.at("direction").get<std::string>());
    set.member_ids = j.at("member_ids").get<std::vector<std::string>>();
    std::sort(set.member_ids.begin(), set.member_ids.end());
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::parse, std::string("error set: ") + e.what());
  }
}

std::string_view to_string(RougeVariant v) {
  switch (v) {
    case RougeVariant::r1: return "rouge1";
    case RougeVariant::r2: return "rouge2";
    case RougeVariant::r3: return "rouge3";
    case RougeVariant::r4: return "rouge4";
    case RougeVariant::rL: return "rougeL";
  }
  return "?";
}

RougeVariant rouge_variant_from_string(std::string_view name) {
  for (auto v : kAllRougeVariants) {
    if (name == to_string(v)) return v;
  }
  if (name == "r1") return RougeVariant::r1;
  if (name == "r2") return RougeVariant::r2;
  if (name == "r3") return RougeVariant::r3;
  if (name == "r4") return RougeVariant::r4;
  if (name == "rL" || name == "rl") return RougeVariant::rL;
  throw Error(ErrorClass::validation,
              "unknown ROUGE variant '" + std::string(name) + "'");
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                      tokens.begin() + static_cast<long>(i + n))];
  }
  return counts;
}

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge(std::string_view candidate, std::string_view reference,
             RougeVariant variant) {
  const auto c = rouge_tokens(candidate);
  const auto r = rouge_tokens(reference);
  if (variant == RougeVariant::rL) {
    if (c.empty() || r.empty()) return 0.0;
    return f1(static_cast<double>(lcs_length(c, r)),
              static_cast<double>(c.size()), static_cast<double>(r.size()));
  }
  const std::size_t n = static_cast<std::size_t>(variant) + 1;
  if (c.size() < n || r.size() < n) return 0.0;
  const auto cc = ngram_counts(c, n);
  const auto rc = ngram_counts(r, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cc) {
    auto it = rc.find(gram);
    if (it != rc.end()) overlap += std::min(count, it->second);
  }
  return f1(static_cast<double>(overlap), static_cast<double>(c.size() - n + 1),
            static_cast<double>(r.size() - n + 1));
}

}  // namespace xrecap

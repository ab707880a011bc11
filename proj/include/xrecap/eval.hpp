#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "xrecap/common.hpp"
#include "xrecap/corpus.hpp"
#include "xrecap/trainer.hpp"

namespace xrecap {

// Ids with one unit row each, in insertion order.
struct VectorTable {
  std::vector<std::string> ids;
  Eigen::MatrixXd rows;

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
};

// Throws not_found naming the first missing id.
VectorTable table_from_store(const EmbeddingStore& store,
                             std::span<const std::string> ids);
// Projects every row through the head; ids are kept.
VectorTable project_table(const ProjectionHead& head, const VectorTable& table);

struct RankingResult {
  std::string query_id;
  std::vector<std::string> ranked_gallery_ids;
  std::size_t rank_of_gold = 0;  // 1-based
};

// Full ranking of the gallery for each query, by descending cosine with
// ties broken by ascending gallery index. `gold` maps query id to the id of
// its single correct gallery item.
std::vector<RankingResult> rank_all(
    const VectorTable& queries, const VectorTable& gallery,
    const std::map<std::string, std::string, std::less<>>& gold);

struct RetrievalReport {
  double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;
  double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;
  double mean_recall = 0;
  std::size_t i2t_queries = 0;
  std::size_t t2i_queries = 0;

  friend bool operator==(const RetrievalReport&,
                         const RetrievalReport&) = default;
};

// Percentage of rankings with rank_of_gold <= k.
double recall_at(std::span<const RankingResult> rankings, std::size_t k);

// Fills the six fields from their values and sets mean_recall.
RetrievalReport make_report(double i2t_r1, double i2t_r5, double i2t_r10,
                            double t2i_r1, double t2i_r5, double t2i_r10);

RetrievalReport recall_report(std::span<const RankingResult> i2t,
                              std::span<const RankingResult> t2i);

// Field-wise mean over several gold sets.
RetrievalReport mean_report(std::span<const RetrievalReport> reports);

enum class Direction { i2t, t2i };
std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view name);

struct ErrorSet {
  Direction direction = Direction::i2t;
  std::vector<std::string> member_ids;  // sorted

  bool contains(std::string_view id) const;
};

// Member iff native rank <= 10 and MT rank > 10.
ErrorSet build_error_set(std::span<const RankingResult> native,
                         std::span<const RankingResult> mt,
                         Direction direction);

// Recall over the member queries only; rankings still cover the full
// gallery. Throws validation on an empty set or a member without ranking.
RetrievalReport restricted_report(std::span<const RankingResult> i2t,
                                  std::span<const RankingResult> t2i,
                                  const ErrorSet& i2t_set,
                                  const ErrorSet& t2i_set);

std::string format_one_decimal(double value);

// JSON keeps full precision; CSV renders one decimal.
std::string report_to_json(const RetrievalReport& report);
RetrievalReport report_from_json(std::string_view text);
std::string reports_to_csv(
    std::span<const std::pair<std::string, RetrievalReport>> rows);
std::string error_set_to_json(const ErrorSet& set);
ErrorSet error_set_from_json(std::string_view text);

enum class RougeVariant { r1, r2, r3, r4, rL };
std::string_view to_string(RougeVariant v);
RougeVariant rouge_variant_from_string(std::string_view name);
inline constexpr RougeVariant kAllRougeVariants[] = {
    RougeVariant::r1, RougeVariant::r2, RougeVariant::r3, RougeVariant::r4,
    RougeVariant::rL};

// Lowercases ASCII and splits on every byte that is not an ASCII letter or
// digit; bytes >= 0x80 stay inside tokens so UTF-8 text is kept whole.
std::vector<std::string> rouge_tokens(std::string_view text);

// F1 in [0, 1]; 0 when either side has no n-grams of the order.
double rouge(std::string_view candidate, std::string_view reference,
             RougeVariant variant);

}  // namespace xrecap

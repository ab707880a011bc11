#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xrecap/common.hpp"

namespace xrecap {

// Hypernym graph plus a sense-ordered lemma index.
//
// Edge file lines are `child<TAB>parent`; a line holding a single synset
// declares an isolated node. Lemma file lines are `lemma<TAB>syn1,syn2,...`
// with senses in priority order. Blank lines and lines starting with '#'
// are skipped in both.
class Taxonomy {
 public:
  static Taxonomy parse(std::istream& edges, std::istream& lemmas,
                        std::string_view edges_name = "<edges>",
                        std::string_view lemmas_name = "<lemmas>");
  static Taxonomy load(const std::filesystem::path& edges,
                       const std::filesystem::path& lemmas);

  bool has_node(std::string_view id) const;
  std::size_t node_count() const { return parents_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  const std::vector<std::string>& parents(std::string_view id) const;
  // Senses in priority order, or nullptr for an unknown lemma.
  const std::vector<std::string>* senses(std::string_view lemma) const;
  bool knows_lemma(std::string_view lemma) const { return senses(lemma) != nullptr; }

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> parents_;
  std::map<std::string, std::vector<std::string>, std::less<>> lemmas_;
  std::size_t edge_count_ = 0;
};

struct Supercategory {
  std::string name;
  std::string anchor;
};

class SupercategorySet {
 public:
  SupercategorySet() = default;
  explicit SupercategorySet(std::vector<Supercategory> members);

  // Lines `name<TAB>anchor`, in priority order.
  static SupercategorySet parse(std::istream& in, std::string_view name = "<supercats>");
  static SupercategorySet load(const std::filesystem::path& path);

  const std::vector<Supercategory>& members() const { return members_; }
  std::vector<std::string> names() const;
  // Throws validation when an anchor is missing from the taxonomy.
  void check_against(const Taxonomy& taxonomy) const;

 private:
  std::vector<Supercategory> members_;
};

struct SupercategoryMatch {
  std::string name;
  std::size_t depth = 0;
};

// Breadth-first closure from the lemma's first sense; the anchor reached at
// minimum depth wins and ties go to the earlier supercategory.
std::optional<SupercategoryMatch> closest_supercategory(
    std::string_view lemma, const Taxonomy& taxonomy,
    const SupercategorySet& supercats);
std::optional<std::string> supercategory_of(std::string_view lemma,
                                            const Taxonomy& taxonomy,
                                            const SupercategorySet& supercats);

// Suffix-strip lemmatizer. With a taxonomy, the first candidate (the word
// itself, then -ies>y, -es, -s stripped) that is a known lemma wins;
// otherwise the rule-based form is returned.
std::string lemmatize(std::string_view word, const Taxonomy* taxonomy = nullptr);

// Lowercased tokens split on anything but ASCII letters, digits and bytes
// of multi-byte characters.
std::vector<std::string> term_tokens(std::string_view text);

struct TaggedToken {
  std::string text;
  std::string pos;
};

struct TaggedCaption {
  std::string caption_id;
  std::vector<TaggedToken> tokens;
};

std::vector<TaggedCaption> parse_pretagged(std::istream& in,
                                           std::string_view name = "<pretagged>");
std::vector<TaggedCaption> load_pretagged(const std::filesystem::path& path);

enum class NounMode { pretagged, lexicon };
NounMode noun_mode_from_string(std::string_view name);

// Lexicon mode: every token whose lemma is in the taxonomy's lemma index.
std::vector<std::string> extract_nouns_lexicon(std::string_view text,
                                               const Taxonomy& taxonomy);
// Pretagged mode: tokens tagged NOUN, lemmatized.
std::vector<std::string> extract_nouns_pretagged(const TaggedCaption& caption,
                                                 const Taxonomy* taxonomy = nullptr);

// alias -> canonical lemma, from lines `alias<TAB>canonical`.
using AliasMap = std::map<std::string, std::string, std::less<>>;
AliasMap load_aliases(const std::filesystem::path& path);
AliasMap parse_aliases(std::istream& in, std::string_view name = "<aliases>");

struct TermDistribution {
  std::vector<std::string> supercategories;
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::size_t total_nouns = 0;
  std::size_t unmapped_count = 0;   // lemma absent from the index
  std::size_t unmatched_count = 0;  // no anchor reachable

  std::size_t count(std::string_view supercat, std::string_view lemma) const;
  std::size_t supercategory_total() const;
  // Terms with count strictly above `min_count`, per supercategory.
  std::map<std::string, std::map<std::string, std::size_t>> filtered(
      std::size_t min_count) const;
};

// Counts noun tokens (one list per caption) after alias merging.
TermDistribution distribution(std::span<const std::vector<std::string>> nouns,
                              const Taxonomy& taxonomy,
                              const SupercategorySet& supercats,
                              const AliasMap& aliases = {});

struct ComparisonRow {
  std::string supercategory;
  std::string term;
  std::size_t count_a = 0;
  std::size_t count_b = 0;
  double ratio = 0.0;   // count_a / count_b; infinity when count_b is 0
  bool flagged = false; // either count is 0
};

// Union of terms above `union_threshold` in either corpus, per
// supercategory, sorted by supercategory order then term.
std::vector<ComparisonRow> compare(const TermDistribution& a,
                                   const TermDistribution& b,
                                   std::size_t union_threshold);

std::string format_ratio(double ratio);
// CSV (term,count_a,count_b,ratio,flag) for one supercategory.
std::string comparison_csv(std::span<const ComparisonRow> rows,
                           std::string_view supercategory);
// Full counts plus the report filtered to counts above `min_count`.
std::string distribution_json(const TermDistribution& d, std::size_t min_count);
TermDistribution distribution_from_json(std::string_view text);

}  // namespace xrecap

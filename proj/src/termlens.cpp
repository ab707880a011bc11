#include "xrecap/termlens.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace xrecap {

namespace {

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool skip_line(const std::string& line) {
  const auto t = trim(line);
  return t.empty() || t[0] == '#';
}

std::string where(std::string_view name, std::size_t line_no) {
  return std::string(name) + ":" + std::to_string(line_no);
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  return in;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80) ch = static_cast<char>(std::tolower(c));
  }
  return out;
}

}  // namespace

Taxonomy Taxonomy::parse(std::istream& edges, std::istream& lemmas,
                         std::string_view edges_name,
                         std::string_view lemmas_name) {
  Taxonomy t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(edges, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() == 1) {
      t.parents_[fields[0]];
      continue;
    }
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorClass::validation,
                  where(edges_name, line_no) + ": dangling edge '" +
                      trim(line) + "'");
    }
    if (fields[0] == fields[1]) {
      throw Error(ErrorClass::validation,
                  where(edges_name, line_no) + ": cycle detected at node '" +
                      fields[0] + "'");
    }
    auto& ps = t.parents_[fields[0]];
    t.parents_[fields[1]];
    if (std::find(ps.begin(), ps.end(), fields[1]) == ps.end()) {
      ps.push_back(fields[1]);
      ++t.edge_count_;
    }
  }

  // Iterative three-colour DFS; a grey node reached again closes a cycle.
  std::map<std::string_view, int> colour;
  for (const auto& [root, _] : t.parents_) {
    if (colour[root] != 0) continue;
    std::vector<std::pair<std::string_view, std::size_t>> stack{{root, 0}};
    colour[root] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto& ps = t.parents_.find(node)->second;
      if (next == ps.size()) {
        colour[node] = 2;
        stack.pop_back();
        continue;
      }
      const std::string_view p = ps[next++];
      const int c = colour[p];
      if (c == 1) {
        throw Error(ErrorClass::validation,
                    std::string(edges_name) + ": cycle detected at node '" +
                        std::string(p) + "'");
      }
      if (c == 0) {
        colour[p] = 1;
        stack.emplace_back(p, 0);
      }
    }
  }

  line_no = 0;
  while (std::getline(lemmas, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorClass::parse,
                  where(lemmas_name, line_no) +
                      ": expected 'lemma<TAB>synset[,synset...]'");
    }
    std::vector<std::string> senses;
    for (auto& s : split_on(fields[1], ',')) {
      if (s.empty()) continue;
      if (!t.has_node(s)) {
        throw Error(ErrorClass::validation,
                    where(lemmas_name, line_no) + ": lemma '" + fields[0] +
                        "' maps to unknown synset '" + s + "'");
      }
      senses.push_back(std::move(s));
    }
    if (senses.empty()) {
      throw Error(ErrorClass::validation, where(lemmas_name, line_no) +
                                              ": lemma '" + fields[0] +
                                              "' has no senses");
    }
    auto [it, inserted] = t.lemmas_.emplace(lower(fields[0]), std::move(senses));
    if (!inserted) {
      throw Error(ErrorClass::validation, where(lemmas_name, line_no) +
                                              ": duplicate lemma '" +
                                              it->first + "'");
    }
  }
  return t;
}

Taxonomy Taxonomy::load(const std::filesystem::path& edges,
                        const std::filesystem::path& lemmas) {
  auto e = open_or_throw(edges);
  auto l = open_or_throw(lemmas);
  return parse(e, l, edges.string(), lemmas.string());
}

bool Taxonomy::has_node(std::string_view id) const {
  return parents_.find(id) != parents_.end();
}

const std::vector<std::string>& Taxonomy::parents(std::string_view id) const {
  static const std::vector<std::string> kNone;
  auto it = parents_.find(id);
  return it == parents_.end() ? kNone : it->second;
}

const std::vector<std::string>* Taxonomy::senses(std::string_view lemma) const {
  auto it = lemmas_.find(lemma);
  return it == lemmas_.end() ? nullptr : &it->second;
}

SupercategorySet::SupercategorySet(std::vector<Supercategory> members)
    : members_(std::move(members)) {
  std::set<std::string> seen;
  for (const auto& m : members_) {
    if (m.name.empty() || m.anchor.empty()) {
      throw Error(ErrorClass::validation, "supercategory with empty name or anchor");
    }
    if (!seen.insert(m.name).second) {
      throw Error(ErrorClass::validation,
                  "duplicate supercategory name '" + m.name + "'");
    }
  }
}

SupercategorySet SupercategorySet::parse(std::istream& in, std::string_view name) {
  std::vector<Supercategory> members;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 2) {
      throw Error(ErrorClass::parse,
                  where(name, line_no) + ": expected 'name<TAB>anchor'");
    }
    members.push_back({fields[0], fields[1]});
  }
  return SupercategorySet(std::move(members));
}

SupercategorySet SupercategorySet::load(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse(in, path.string());
}

std::vector<std::string> SupercategorySet::names() const {
  std::vector<std::string> out;
  for (const auto& m : members_) out.push_back(m.name);
  return out;
}

void SupercategorySet::check_against(const Taxonomy& taxonomy) const {
  for (const auto& m : members_) {
    if (!taxonomy.has_node(m.anchor)) {
      throw Error(ErrorClass::validation,
                  "supercategory '" + m.name + "' anchor '" + m.anchor +
                      "' is not in the taxonomy");
    }
  }
}

std::optional<SupercategoryMatch> closest_supercategory(
    std::string_view lemma, const Taxonomy& taxonomy,
    const SupercategorySet& supercats) {
  const auto* senses = taxonomy.senses(lemma);
  if (!senses) return std::nullopt;
  std::map<std::string_view, std::size_t> anchor_rank;
  for (std::size_t i = 0; i < supercats.members().size(); ++i) {
    anchor_rank.emplace(supercats.members()[i].anchor, i);
  }

  std::set<std::string_view> seen{senses->front()};
  std::vector<std::string_view> frontier{senses->front()};
  for (std::size_t depth = 0; !frontier.empty(); ++depth) {
    std::optional<std::size_t> best;
    for (auto node : frontier) {
      auto it = anchor_rank.find(node);
      if (it != anchor_rank.end() && (!best || it->second < *best)) {
        best = it->second;
      }
    }
    if (best) return SupercategoryMatch{supercats.members()[*best].name, depth};
    std::vector<std::string_view> next;
    for (auto node : frontier) {
      for (const auto& p : taxonomy.parents(node)) {
        if (seen.insert(p).second) next.push_back(p);
      }
    }
    frontier = std::move(next);
  }
  return std::nullopt;
}

std::optional<std::string> supercategory_of(std::string_view lemma,
                                            const Taxonomy& taxonomy,
                                            const SupercategorySet& supercats) {
  auto m = closest_supercategory(lemma, taxonomy, supercats);
  if (!m) return std::nullopt;
  return m->name;
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() &&
         s.substr(s.size() - suffix.size()) == suffix;
}

std::vector<std::string> lemma_candidates(const std::string& w) {
  std::vector<std::string> out{w};
  if (ends_with(w, "ies")) out.push_back(w.substr(0, w.size() - 3) + "y");
  if (ends_with(w, "es")) out.push_back(w.substr(0, w.size() - 2));
  if (ends_with(w, "s")) out.push_back(w.substr(0, w.size() - 1));
  return out;
}

std::string rule_lemma(const std::string& w) {
  if (ends_with(w, "ies")) return w.substr(0, w.size() - 3) + "y";
  for (std::string_view sfx : {"sses", "xes", "zes", "ches", "shes"}) {
    if (ends_with(w, sfx)) return w.substr(0, w.size() - 2);
  }
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (ends_with(w, "s")) return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace

std::string lemmatize(std::string_view word, const Taxonomy* taxonomy) {
  const std::string w = lower(word);
  if (taxonomy) {
    for (const auto& c : lemma_candidates(w)) {
      if (taxonomy->knows_lemma(c)) return c;
    }
  }
  return rule_lemma(w);
}

std::vector<std::string> term_tokens(std::string_view text) {
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

std::vector<TaggedCaption> parse_pretagged(std::istream& in, std::string_view name) {
  std::vector<TaggedCaption> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaggedCaption c;
      c.caption_id = j.at("caption_id").get<std::string>();
      for (const auto& tok : j.at("tokens")) {
        c.tokens.push_back({tok.at("text").get<std::string>(),
                            tok.at("pos").get<std::string>()});
      }
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorClass::parse,
                  where(name, line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TaggedCaption> load_pretagged(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_pretagged(in, path.string());
}

NounMode noun_mode_from_string(std::string_view name) {
  if (name == "pretagged") return NounMode::pretagged;
  if (name == "lexicon") return NounMode::lexicon;
  throw Error(ErrorClass::validation,
              "unknown noun mode '" + std::string(name) +
                  "' (expected pretagged or lexicon)");
}

std::vector<std::string> extract_nouns_lexicon(std::string_view text,
                                               const Taxonomy& taxonomy) {
  std::vector<std::string> out;
  for (const auto& tok : term_tokens(text)) {
    for (const auto& c : lemma_candidates(tok)) {
      if (taxonomy.knows_lemma(c)) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> extract_nouns_pretagged(const TaggedCaption& caption,
                                                 const Taxonomy* taxonomy) {
  std::vector<std::string> out;
  for (const auto& tok : caption.tokens) {
    if (tok.pos != "NOUN") continue;
    out.push_back(lemmatize(trim(tok.text), taxonomy));
  }
  return out;
}

AliasMap parse_aliases(std::istream& in, std::string_view name) {
  AliasMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorClass::parse,
                  where(name, line_no) + ": expected 'alias<TAB>canonical'");
    }
    out[lower(fields[0])] = lower(fields[1]);
  }
  return out;
}

AliasMap load_aliases(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_aliases(in, path.string());
}

std::size_t TermDistribution::count(std::string_view supercat,
                                    std::string_view lemma) const {
  auto it = counts.find(std::string(supercat));
  if (it == counts.end()) return 0;
  auto jt = it->second.find(std::string(lemma));
  return jt == it->second.end() ? 0 : jt->second;
}

std::size_t TermDistribution::supercategory_total() const {
  std::size_t total = 0;
  for (const auto& [_, terms] : counts) {
    for (const auto& [__, n] : terms) total += n;
  }
  return total;
}

std::map<std::string, std::map<std::string, std::size_t>>
TermDistribution::filtered(std::size_t min_count) const {
  std::map<std::string, std::map<std::string, std::size_t>> out;
  for (const auto& name : supercategories) {
    auto& dst = out[name];
    auto it = counts.find(name);
    if (it == counts.end()) continue;
    for (const auto& [term, n] : it->second) {
      if (n > min_count) dst[term] = n;
    }
  }
  return out;
}

TermDistribution distribution(std::span<const std::vector<std::string>> nouns,
                              const Taxonomy& taxonomy,
                              const SupercategorySet& supercats,
                              const AliasMap& aliases) {
  supercats.check_against(taxonomy);
  TermDistribution d;
  d.supercategories = supercats.names();
  for (const auto& name : d.supercategories) d.counts[name];
  std::map<std::string, std::optional<std::string>, std::less<>> memo;
  for (const auto& caption : nouns) {
    for (const auto& raw : caption) {
      ++d.total_nouns;
      auto alias = aliases.find(raw);
      const std::string& lemma = alias == aliases.end() ? raw : alias->second;
      if (!taxonomy.knows_lemma(lemma)) {
        ++d.unmapped_count;
        continue;
      }
      auto m = memo.find(lemma);
      if (m == memo.end()) {
        m = memo.emplace(lemma, supercategory_of(lemma, taxonomy, supercats)).first;
      }
      if (!m->second) {
        ++d.unmatched_count;
        continue;
      }
      ++d.counts[*m->second][lemma];
    }
  }
  return d;
}

std::vector<ComparisonRow> compare(const TermDistribution& a,
                                   const TermDistribution& b,
                                   std::size_t union_threshold) {
  if (a.supercategories != b.supercategories) {
    throw Error(ErrorClass::validation,
                "distributions use different supercategory sets");
  }
  std::vector<ComparisonRow> rows;
  for (const auto& sc : a.supercategories) {
    std::set<std::string> terms;
    for (const auto* d : {&a, &b}) {
      auto it = d->counts.find(sc);
      if (it == d->counts.end()) continue;
      for (const auto& [term, n] : it->second) {
        if (n > union_threshold) terms.insert(term);
      }
    }
    for (const auto& term : terms) {
      ComparisonRow r;
      r.supercategory = sc;
      r.term = term;
      r.count_a = a.count(sc, term);
      r.count_b = b.count(sc, term);
      r.ratio = r.count_b == 0 ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(r.count_a) /
                                     static_cast<double>(r.count_b);
      r.flagged = r.count_a == 0 || r.count_b == 0;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::string format_ratio(double ratio) {
  if (std::isinf(ratio)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", ratio);
  return buf;
}

std::string comparison_csv(std::span<const ComparisonRow> rows,
                           std::string_view supercategory) {
  std::ostringstream out;
  out << "term,count_a,count_b,ratio,flag\n";
  for (const auto& r : rows) {
    if (r.supercategory != supercategory) continue;
    out << r.term << ',' << r.count_a << ',' << r.count_b << ','
        << format_ratio(r.ratio) << ',' << (r.flagged ? "zero_count" : "")
        << '\n';
  }
  return out.str();
}

std::string distribution_json(const TermDistribution& d, std::size_t min_count) {
  nlohmann::ordered_json j;
  j["supercategories"] = d.supercategories;
  j["total_nouns"] = d.total_nouns;
  j["unmapped_count"] = d.unmapped_count;
  j["unmatched_count"] = d.unmatched_count;
  j["min_count"] = min_count;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  nlohmann::ordered_json report = nlohmann::ordered_json::object();
  const auto kept = d.filtered(min_count);
  for (const auto& name : d.supercategories) {
    auto it = d.counts.find(name);
    counts[name] = it == d.counts.end()
                       ? nlohmann::ordered_json::object()
                       : nlohmann::ordered_json(it->second);
    report[name] = kept.at(name);
  }
  j["counts"] = counts;
  j["report"] = report;
  return j.dump(2) + "\n";
}

TermDistribution distribution_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TermDistribution d;
    d.supercategories = j.at("supercategories").get<std::vector<std::string>>();
    d.total_nouns = j.at("total_nouns").get<std::size_t>();
    d.unmapped_count = j.at("unmapped_count").get<std::size_t>();
    d.unmatched_count = j.at("unmatched_count").get<std::size_t>();
    for (const auto& name : d.supercategories) {
      d.counts[name] =
          j.at("counts").at(name).get<std::map<std::string, std::size_t>>();
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorClass::parse, std::string("distribution: ") + e.what());
  }
}

}  // namespace xrecap

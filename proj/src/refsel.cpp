#include "xrecap/refsel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace xrecap {

NnIndex NnIndex::build(const EmbeddingStore& store,
                       std::span<const std::string> ids) {
  NnIndex index;
  index.dim_ = store.dim();
  index.rows_.reserve(ids.size() * store.dim());
  for (const auto& id : ids) {
    auto row = store.find(id);
    if (!row) {
      throw Error(ErrorClass::not_found,
                  "image '" + id + "' is not in the embedding store");
    }
    if (!index.position_.emplace(id, index.ids_.size()).second) {
      throw Error(ErrorClass::validation,
                  "duplicate id '" + id + "' in index build");
    }
    index.ids_.push_back(id);
    for (float v : store.row(*row)) index.rows_.push_back(v);
  }
  return index;
}

bool NnIndex::contains(std::string_view id) const {
  return position_.count(std::string(id)) > 0;
}

std::span<const double> NnIndex::row(std::size_t i) const {
  return std::span<const double>(rows_).subspan(i * dim_, dim_);
}

std::vector<Neighbor> NnIndex::query(std::span<const double> vector,
                                     std::size_t k) const {
  if (vector.size() != dim_) {
    throw Error(ErrorClass::validation,
                "query dim " + std::to_string(vector.size()) +
                    " does not match index dim " + std::to_string(dim_));
  }
  if (k == 0 || k > size()) {
    throw Error(ErrorClass::validation,
                "k=" + std::to_string(k) + " outside [1, " +
                    std::to_string(size()) + "]");
  }
  double sq = 0;
  for (double v : vector) sq += v * v;
  if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) {
    throw Error(ErrorClass::validation, "query vector is not unit norm");
  }

  std::vector<double> sims(size());
  for (std::size_t r = 0; r < size(); ++r) {
    const double* row = rows_.data() + r * dim_;
    double dot = 0;
    for (std::size_t i = 0; i < dim_; ++i) dot += row[i] * vector[i];
    sims[r] = dot;
  }
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (sims[a] != sims[b]) return sims[a] > sims[b];
                      return a < b;
                    });
  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({ids_[order[i]], sims[order[i]]});
  }
  return out;
}

std::vector<Neighbor> NnIndex::query(std::span<const float> vector,
                                     std::size_t k) const {
  std::vector<double> v(vector.begin(), vector.end());
  return query(std::span<const double>(v), k);
}

CaptionsByImage::CaptionsByImage(std::span<const CaptionRecord> captions,
                                 const LanguageTag& lang) {
  for (const auto& c : captions) {
    if (c.lang == lang) groups_[c.image_id].push_back(c);
  }
  for (auto& [_, group] : groups_) {
    std::sort(group.begin(), group.end(),
              [](const CaptionRecord& a, const CaptionRecord& b) {
                return a.caption_id < b.caption_id;
              });
  }
}

const std::vector<CaptionRecord>& CaptionsByImage::of(
    std::string_view image_id) const {
  static const std::vector<CaptionRecord> kEmpty;
  auto it = groups_.find(image_id);
  return it == groups_.end() ? kEmpty : it->second;
}

GuidanceExample select_guidance(std::string_view train_image_id,
                                std::span<const float> train_vector,
                                const NnIndex& reference_index,
                                const CaptionsByImage& source_captions,
                                const CaptionsByImage& target_captions,
                                const RefSelConfig& config) {
  if (config.k == 0) {
    throw Error(ErrorClass::validation, "refsel k must be at least 1");
  }
  if (reference_index.contains(train_image_id)) {
    throw Error(ErrorClass::validation,
                "train image '" + std::string(train_image_id) +
                    "' is part of the reference set");
  }
  const auto neighbors = reference_index.query(train_vector, config.k);
  const Neighbor& chosen = neighbors.back();

  const auto& src = source_captions.of(chosen.image_id);
  const auto& tgt = target_captions.of(chosen.image_id);
  if (src.empty() || tgt.empty()) {
    throw Error(ErrorClass::validation,
                "reference image '" + chosen.image_id + "' has no " +
                    (src.empty() ? "source" : "target") +
                    "-language caption");
  }
  Rng rng(derive_seed(config.seed, train_image_id));
  GuidanceExample example;
  example.reference_image_id = chosen.image_id;
  example.similarity = chosen.similarity;
  example.input_caption = src[rng.index(src.size())];
  example.output_caption = tgt[rng.index(tgt.size())];
  return example;
}

GuidanceAssignment to_assignment(std::string_view train_image_id,
                                 const GuidanceExample& example) {
  return {std::string(train_image_id), example.reference_image_id,
          example.similarity, example.input_caption.caption_id,
          example.output_caption.caption_id};
}

std::vector<GuidanceAssignment> assign_guidance(
    std::span<const std::string> train_ids, const EmbeddingStore& images,
    const NnIndex& reference_index, const CaptionsByImage& source_captions,
    const CaptionsByImage& target_captions, const RefSelConfig& config) {
  std::vector<GuidanceAssignment> out;
  out.reserve(train_ids.size());
  for (const auto& id : train_ids) {
    auto example = select_guidance(id, images.vector(id), reference_index,
                                   source_captions, target_captions, config);
    out.push_back(to_assignment(id, example));
  }
  return out;
}

void write_assignments(const std::filesystem::path& path,
                       std::span<const GuidanceAssignment> assignments) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::io, "cannot write " + path.string());
  for (const auto& a : assignments) {
    nlohmann::ordered_json obj;
    obj["train_image_id"] = a.train_image_id;
    obj["reference_image_id"] = a.reference_image_id;
    obj["similarity"] = a.similarity;
    obj["input_caption_id"] = a.input_caption_id;
    obj["output_caption_id"] = a.output_caption_id;
    out << obj.dump() << '\n';
  }
}

std::vector<GuidanceAssignment> read_assignments(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorClass::io, "cannot open " + path.string());
  std::vector<GuidanceAssignment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto obj = nlohmann::json::parse(line);
      out.push_back({obj.at("train_image_id").get<std::string>(),
                     obj.at("reference_image_id").get<std::string>(),
                     obj.at("similarity").get<double>(),
                     obj.at("input_caption_id").get<std::string>(),
                     obj.at("output_caption_id").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorClass::parse, path.string() + ":" +
                                         std::to_string(line_no) + ": " +
                                         e.what());
    }
  }
  return out;
}

std::map<std::string, GuidanceExample> resolve_assignments(
    std::span<const GuidanceAssignment> assignments,
    std::span<const CaptionRecord> captions) {
  std::unordered_map<std::string, const CaptionRecord*> by_id;
  for (const auto& c : captions) by_id.emplace(c.caption_id, &c);
  auto lookup = [&](const std::string& id) -> const CaptionRecord& {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(ErrorClass::not_found,
                  "guidance caption '" + id + "' not found in corpus");
    }
    return *it->second;
  };
  std::map<std::string, GuidanceExample> out;
  for (const auto& a : assignments) {
    GuidanceExample g;
    g.reference_image_id = a.reference_image_id;
    g.similarity = a.similarity;
    g.input_caption = lookup(a.input_caption_id);
    g.output_caption = lookup(a.output_caption_id);
    if (g.input_caption.image_id != a.reference_image_id ||
        g.output_caption.image_id != a.reference_image_id) {
      throw Error(ErrorClass::validation,
                  "guidance captions for '" + a.train_image_id +
                      "' do not belong to reference image '" +
                      a.reference_image_id + "'");
    }
    out.emplace(a.train_image_id, std::move(g));
  }
  return out;
}

}  // namespace xrecap

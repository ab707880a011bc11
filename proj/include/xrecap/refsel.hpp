#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xrecap/common.hpp"
#include "xrecap/corpus.hpp"

namespace xrecap {

struct Neighbor {
  std::string image_id;
  double similarity = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Exact cosine index over unit vectors. Rows keep insertion order, which is
// also the tie-break order for equal similarities.
class NnIndex {
 public:
  static constexpr double kUnitTolerance = 1e-5;

  // Throws not_found naming the first id absent from `store`.
  static NnIndex build(const EmbeddingStore& store,
                       std::span<const std::string> ids);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  bool contains(std::string_view id) const;
  std::span<const double> row(std::size_t i) const;

  // Top-k by descending similarity, ties by ascending row.
  std::vector<Neighbor> query(std::span<const double> vector,
                              std::size_t k) const;
  std::vector<Neighbor> query(std::span<const float> vector,
                              std::size_t k) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> rows_;
  std::unordered_map<std::string, std::size_t> position_;
};

struct GuidanceExample {
  std::string reference_image_id;
  CaptionRecord input_caption;
  // Its text may be replaced by a translation into the prompt language.
  CaptionRecord output_caption;
  double similarity = 0.0;
};

struct RefSelConfig {
  std::size_t k = 1;  // neighbor rank to use; 1 = nearest
  std::uint64_t seed = 0;
};

// Captions of one language grouped by image, each group sorted by caption_id.
class CaptionsByImage {
 public:
  CaptionsByImage() = default;
  CaptionsByImage(std::span<const CaptionRecord> captions,
                  const LanguageTag& lang);

  const std::vector<CaptionRecord>& of(std::string_view image_id) const;

 private:
  std::map<std::string, std::vector<CaptionRecord>, std::less<>> groups_;
};

GuidanceExample select_guidance(std::string_view train_image_id,
                                std::span<const float> train_vector,
                                const NnIndex& reference_index,
                                const CaptionsByImage& source_captions,
                                const CaptionsByImage& target_captions,
                                const RefSelConfig& config);

struct GuidanceAssignment {
  std::string train_image_id;
  std::string reference_image_id;
  double similarity = 0.0;
  std::string input_caption_id;
  std::string output_caption_id;

  friend bool operator==(const GuidanceAssignment&,
                         const GuidanceAssignment&) = default;
};

GuidanceAssignment to_assignment(std::string_view train_image_id,
                                 const GuidanceExample& example);

// Selects guidance for every train image, in the given order.
std::vector<GuidanceAssignment> assign_guidance(
    std::span<const std::string> train_ids, const EmbeddingStore& images,
    const NnIndex& reference_index, const CaptionsByImage& source_captions,
    const CaptionsByImage& target_captions, const RefSelConfig& config);

void write_assignments(const std::filesystem::path& path,
                       std::span<const GuidanceAssignment> assignments);
std::vector<GuidanceAssignment> read_assignments(
    const std::filesystem::path& path);

// Rebuilds full guidance examples (keyed by train image) from assignments.
std::map<std::string, GuidanceExample> resolve_assignments(
    std::span<const GuidanceAssignment> assignments,
    std::span<const CaptionRecord> captions);

}  // namespace xrecap

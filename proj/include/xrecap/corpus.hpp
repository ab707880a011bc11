#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xrecap {

// Lowercase BCP-47-style code such as "en", "ja" or "pt-br".
class LanguageTag {
 public:
  explicit LanguageTag(std::string code);

  const std::string& code() const noexcept { return code_; }

  friend bool operator==(const LanguageTag&, const LanguageTag&) = default;
  friend auto operator<=>(const LanguageTag&, const LanguageTag&) = default;

 private:
  std::string code_;
};

enum class CaptionSource {
  native,
  machine_translated,
  rewrite_paraphrase,
  rewrite_diverse,
  rewrite_targeted,
};

std::string_view to_string(CaptionSource source);
CaptionSource caption_source_from_string(std::string_view name);

struct ImageRecord {
  std::string image_id;
  std::optional<std::string> uri;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct CaptionRecord {
  std::string caption_id;
  std::string image_id;
  LanguageTag lang{"en"};
  CaptionSource source = CaptionSource::native;
  std::string text;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

// Captions are JSONL, one object per line with keys
// caption_id, image_id, lang, source, text.
std::vector<CaptionRecord> parse_captions(
    std::istream& in, const std::optional<LanguageTag>& expected_lang = {},
    std::string_view source_name = "<stream>");
std::vector<CaptionRecord> ingest_captions(
    const std::filesystem::path& path,
    const std::optional<LanguageTag>& expected_lang = {});
std::string caption_to_json_line(const CaptionRecord& record);
void write_captions(const std::filesystem::path& path,
                    std::span<const CaptionRecord> records);

// Images are JSONL {image_id, uri?}.
std::vector<ImageRecord> ingest_images(const std::filesystem::path& path);
void write_images(const std::filesystem::path& path,
                  std::span<const ImageRecord> images);

// Checks that every caption's image_id resolves to an image.
void validate_corpus(std::span<const ImageRecord> images,
                     std::span<const CaptionRecord> captions);

// Id-indexed unit-norm vectors. Rows keep insertion order; every vector is
// L2-normalized on insertion and zero or non-finite vectors are rejected.
class EmbeddingStore {
 public:
  static constexpr double kUnitTolerance = 1e-6;

  explicit EmbeddingStore(std::size_t dim);

  void add(std::string id, std::span<const float> values);
  void add(std::string id, std::span<const double> values);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  bool contains(std::string_view id) const;
  std::optional<std::size_t> find(std::string_view id) const;

  std::span<const float> row(std::size_t i) const;
  // Throws not_found naming the id.
  std::span<const float> vector(std::string_view id) const;

  // Appends every entry of `other`; ids must not collide.
  void merge(const EmbeddingStore& other);

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
  }

 private:
  void insert(std::string id, std::vector<double> values);

  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Reads EMB1 binary or the JSON fallback, chosen by the leading bytes.
EmbeddingStore ingest_embeddings(const std::filesystem::path& path);
EmbeddingStore read_emb1(std::istream& in);
void write_emb1(std::ostream& out, const EmbeddingStore& store);
void write_emb1(const std::filesystem::path& path, const EmbeddingStore& store);
EmbeddingStore parse_embeddings_json(std::string_view text);
void write_embeddings_json(const std::filesystem::path& path,
                           const EmbeddingStore& store);

struct CorpusSplit {
  std::vector<std::string> reference_ids;
  std::vector<std::string> train_ids;
  std::vector<std::string> eval_ids;

  friend bool operator==(const CorpusSplit&, const CorpusSplit&) = default;
};

// Shuffles the (sorted, unique) ids under `seed`; reference and train take
// floor(fraction * total) ids each and the remainder goes to eval.
CorpusSplit make_split(std::vector<std::string> image_ids, double ref_fraction,
                       double train_fraction, std::uint64_t seed);
void write_split(const std::filesystem::path& path, const CorpusSplit& split);
CorpusSplit read_split(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t num_concepts = 4;
  std::size_t images_per_concept = 250;
  std::size_t dim = 16;
  double shift_magnitude = 0.8;
  double noise_sigma = 0.1;
  // Per-component spread of images around their concept center.
  double image_spread = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

// Desk-scale bilingual corpus. Per image: an English caption
// "<img>.en", its translation "<img>.en@mt" and a native caption
// "<img>.native". Text stores are keyed by caption id. The rewrite store
// holds "<img>.en@targeted" (shifted like native captions) and
// "<img>.en@paraphrase" / "<img>.en@diverse" (unshifted, like MT).
struct SyntheticCorpus {
  LanguageTag source_lang{"en"};
  LanguageTag target_lang{"ja"};
  std::vector<ImageRecord> images;
  std::map<std::string, std::size_t> concept_of;
  EmbeddingStore image_vectors;
  EmbeddingStore text_mt;
  EmbeddingStore text_native;
  EmbeddingStore text_rewrite;
  std::vector<CaptionRecord> captions;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

std::string synthetic_image_id(std::size_t index);

}  // namespace xrecap

#include "xrecap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "xrecap/common.hpp"

namespace xrecap {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

LanguageTag::LanguageTag(std::string code) : code_(std::move(code)) {
  const bool ok =
      !code_.empty() && code_.front() != '-' && code_.back() != '-' &&
      std::all_of(code_.begin(), code_.end(),
                  [](char c) { return (c >= 'a' && c <= 'z') || c == '-'; });
  if (!ok) {
    throw Error(ErrorClass::validation,
                "invalid language tag '" + code_ +
                    "' (expected lowercase letters and hyphens)");
  }
}

std::string_view to_string(CaptionSource source) {
  switch (source) {
    case CaptionSource::native: return "native";
    case CaptionSource::machine_translated: return "machine_translated";
    case CaptionSource::rewrite_paraphrase: return "rewrite_paraphrase";
    case CaptionSource::rewrite_diverse: return "rewrite_diverse";
    case CaptionSource::rewrite_targeted: return "rewrite_targeted";
  }
  return "native";
}

CaptionSource caption_source_from_string(std::string_view name) {
  for (auto s : {CaptionSource::native, CaptionSource::machine_translated,
                 CaptionSource::rewrite_paraphrase,
                 CaptionSource::rewrite_diverse,
                 CaptionSource::rewrite_targeted}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorClass::validation,
              "unknown caption source '" + std::string(name) + "'");
}

namespace {

std::ifstream open_input(const std::filesystem::path& path,
                         std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) {
    throw Error(ErrorClass::io, "cannot open " + path.string());
  }
  return in;
}

std::ofstream open_output(const std::filesystem::path& path,
                          std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) {
    throw Error(ErrorClass::io, "cannot write " + path.string());
  }
  return out;
}

std::string required_string(const json& obj, const char* key,
                            const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(ErrorClass::parse,
                where + ": missing or non-string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

std::vector<CaptionRecord> parse_captions(
    std::istream& in, const std::optional<LanguageTag>& expected_lang,
    std::string_view source_name) {
  std::vector<CaptionRecord> records;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where =
        std::string(source_name) + ":" + std::to_string(line_no);

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorClass::parse, where + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw Error(ErrorClass::parse, where + ": expected a JSON object");
    }

    CaptionRecord rec;
    rec.caption_id = required_string(obj, "caption_id", where);
    rec.image_id = required_string(obj, "image_id", where);
    try {
      rec.lang = LanguageTag(required_string(obj, "lang", where));
      rec.source = caption_source_from_string(
          required_string(obj, "source", where));
    } catch (const Error& e) {
      if (e.error_class() == ErrorClass::parse) throw;
      throw Error(ErrorClass::parse, where + ": " + e.what());
    }
    rec.text = required_string(obj, "text", where);

    if (rec.caption_id.empty() || rec.image_id.empty()) {
      throw Error(ErrorClass::parse, where + ": empty caption_id or image_id");
    }
    if (trim(rec.text).empty()) {
      throw Error(ErrorClass::parse, where + ": caption text is empty");
    }
    if (expected_lang && rec.lang != *expected_lang) {
      throw Error(ErrorClass::validation,
                  where + ": language mismatch (expected '" +
                      expected_lang->code() + "', found '" + rec.lang.code() +
                      "')");
    }
    auto [it, inserted] = first_line.emplace(rec.caption_id, line_no);
    if (!inserted) {
      throw Error(ErrorClass::validation,
                  std::string(source_name) + ": duplicate caption_id '" +
                      rec.caption_id + "' on lines " +
                      std::to_string(it->second) + " and " +
                      std::to_string(line_no));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CaptionRecord> ingest_captions(
    const std::filesystem::path& path,
    const std::optional<LanguageTag>& expected_lang) {
  auto in = open_input(path);
  return parse_captions(in, expected_lang, path.string());
}

std::string caption_to_json_line(const CaptionRecord& record) {
  ordered_json obj;
  obj["caption_id"] = record.caption_id;
  obj["image_id"] = record.image_id;
  obj["lang"] = record.lang.code();
  obj["source"] = std::string(to_string(record.source));
  obj["text"] = record.text;
  return obj.dump();
}

void write_captions(const std::filesystem::path& path,
                    std::span<const CaptionRecord> records) {
  auto out = open_output(path, std::ios::out | std::ios::binary);
  for (const auto& r : records) out << caption_to_json_line(r) << '\n';
}

std::vector<ImageRecord> ingest_images(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<ImageRecord> images;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorClass::parse, where + ": malformed JSON: " + e.what());
    }
    ImageRecord img;
    img.image_id = required_string(obj, "image_id", where);
    if (auto it = obj.find("uri"); it != obj.end() && it->is_string()) {
      img.uri = it->get<std::string>();
    }
    if (!seen.insert(img.image_id).second) {
      throw Error(ErrorClass::validation,
                  where + ": duplicate image_id '" + img.image_id + "'");
    }
    images.push_back(std::move(img));
  }
  return images;
}

void write_images(const std::filesystem::path& path,
                  std::span<const ImageRecord> images) {
  auto out = open_output(path, std::ios::out | std::ios::binary);
  for (const auto& img : images) {
    ordered_json obj;
    obj["image_id"] = img.image_id;
    if (img.uri) obj["uri"] = *img.uri;
    out << obj.dump() << '\n';
  }
}

void validate_corpus(std::span<const ImageRecord> images,
                     std::span<const CaptionRecord> captions) {
  std::set<std::string_view> ids;
  for (const auto& img : images) ids.insert(img.image_id);
  for (const auto& c : captions) {
    if (!ids.count(c.image_id)) {
      throw Error(ErrorClass::validation,
                  "caption '" + c.caption_id + "' references unknown image '" +
                      c.image_id + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// EmbeddingStore

EmbeddingStore::EmbeddingStore(std::size_t dim) : dim_(dim) {
  if (dim == 0) {
    throw Error(ErrorClass::validation, "embedding dim must be positive");
  }
}

void EmbeddingStore::add(std::string id, std::span<const float> values) {
  insert(std::move(id), std::vector<double>(values.begin(), values.end()));
}

void EmbeddingStore::add(std::string id, std::span<const double> values) {
  insert(std::move(id), std::vector<double>(values.begin(), values.end()));
}

void EmbeddingStore::insert(std::string id, std::vector<double> values) {
  if (values.size() != dim_) {
    throw Error(ErrorClass::validation,
                "vector '" + id + "' has dim " + std::to_string(values.size()) +
                    ", store dim is " + std::to_string(dim_));
  }
  if (index_.count(id)) {
    throw Error(ErrorClass::validation, "duplicate embedding id '" + id + "'");
  }
  double sq = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorClass::numeric,
                  "vector '" + id + "' contains a non-finite value");
    }
    sq += v * v;
  }
  if (sq == 0.0) {
    throw Error(ErrorClass::numeric,
                "vector '" + id + "' is zero and cannot be normalized");
  }
  const double norm = std::sqrt(sq);
  // Vectors already unit within tolerance are kept bit-for-bit so that
  // re-ingesting a serialized store is the identity.
  const bool unit = std::abs(norm - 1.0) <= kUnitTolerance;
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  for (double v : values) {
    data_.push_back(static_cast<float>(unit ? v : v / norm));
  }
}

bool EmbeddingStore::contains(std::string_view id) const {
  return index_.count(std::string(id)) > 0;
}

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingStore::row(std::size_t i) const {
  return std::span<const float>(data_).subspan(i * dim_, dim_);
}

std::span<const float> EmbeddingStore::vector(std::string_view id) const {
  auto i = find(id);
  if (!i) {
    throw Error(ErrorClass::not_found,
                "no embedding for id '" + std::string(id) + "'");
  }
  return row(*i);
}

void EmbeddingStore::merge(const EmbeddingStore& other) {
  if (other.dim_ != dim_) {
    throw Error(ErrorClass::validation,
                "cannot merge stores of dim " + std::to_string(dim_) +
                    " and " + std::to_string(other.dim_));
  }
  for (std::size_t i = 0; i < other.size(); ++i) {
    add(other.ids_[i], other.row(i));
  }
}

namespace {

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};

}  // namespace

EmbeddingStore read_emb1(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kEmbMagic)) {
    throw Error(ErrorClass::format, "bad magic: not an EMB1 file");
  }
  const auto dim = detail::get_le<std::uint32_t>(in, "dim");
  const auto count = detail::get_le<std::uint64_t>(in, "count");
  if (dim == 0) throw Error(ErrorClass::format, "EMB1 header has dim 0");

  EmbeddingStore store(dim);
  std::vector<float> row(dim);
  for (std::uint64_t n = 0; n < count; ++n) {
    const std::string what = "entry " + std::to_string(n) + " of " +
                             std::to_string(count) + " (truncated file)";
    const auto id_len = detail::get_le<std::uint16_t>(in, what.c_str());
    std::string id(id_len, '\0');
    if (id_len && !in.read(id.data(), id_len)) {
      throw Error(ErrorClass::format, "truncated file while reading " + what);
    }
    for (auto& v : row) v = detail::get_f32(in, what.c_str());
    store.add(std::move(id), std::span<const float>(row));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorClass::format,
                "EMB1 file has trailing bytes after " + std::to_string(count) +
                    " entries");
  }
  return store;
}

void write_emb1(std::ostream& out, const EmbeddingStore& store) {
  out.write(kEmbMagic, 4);
  detail::put_le(out, static_cast<std::uint32_t>(store.dim()));
  detail::put_le(out, static_cast<std::uint64_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& id = store.ids()[i];
    if (id.size() > UINT16_MAX) {
      throw Error(ErrorClass::validation, "embedding id too long: " + id);
    }
    detail::put_le(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (float v : store.row(i)) detail::put_f32(out, v);
  }
}

void write_emb1(const std::filesystem::path& path,
                const EmbeddingStore& store) {
  auto out = open_output(path, std::ios::out | std::ios::binary);
  write_emb1(out, store);
}

EmbeddingStore parse_embeddings_json(std::string_view text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw Error(ErrorClass::parse, std::string("malformed embeddings JSON: ") +
                                       e.what());
  }
  if (!doc.is_object() || !doc.contains("dim") || !doc["dim"].is_number() ||
      !doc.contains("entries") || !doc["entries"].is_object()) {
    throw Error(ErrorClass::format,
                "embeddings JSON must be {\"dim\": d, \"entries\": {...}}");
  }
  const auto dim = doc["dim"].get<std::int64_t>();
  if (dim <= 0) throw Error(ErrorClass::format, "embeddings JSON dim <= 0");
  EmbeddingStore store(static_cast<std::size_t>(dim));
  for (const auto& [id, arr] : doc["entries"].items()) {
    if (!arr.is_array()) {
      throw Error(ErrorClass::format, "entry '" + id + "' is not an array");
    }
    std::vector<double> values;
    for (const auto& v : arr) {
      if (!v.is_number()) {
        throw Error(ErrorClass::numeric,
                    "entry '" + id + "' contains a non-numeric value");
      }
      values.push_back(v.get<double>());
    }
    store.add(id, std::span<const double>(values));
  }
  return store;
}

void write_embeddings_json(const std::filesystem::path& path,
                           const EmbeddingStore& store) {
  ordered_json entries = ordered_json::object();
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto row = store.row(i);
    entries[store.ids()[i]] = std::vector<float>(row.begin(), row.end());
  }
  ordered_json doc;
  doc["dim"] = store.dim();
  doc["entries"] = std::move(entries);
  auto out = open_output(path, std::ios::out | std::ios::binary);
  out << doc.dump() << '\n';
}

EmbeddingStore ingest_embeddings(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::in | std::ios::binary);
  char head[4] = {};
  in.read(head, 4);
  const auto got = in.gcount();
  in.clear();
  in.seekg(0);
  if (got == 4 && std::equal(head, head + 4, kEmbMagic)) {
    return read_emb1(in);
  }
  // Anything that does not look like JSON is reported as a magic mismatch.
  std::size_t first = 0;
  while (first < static_cast<std::size_t>(got) &&
         std::isspace(static_cast<unsigned char>(head[first]))) {
    ++first;
  }
  if (got == 0 || first >= static_cast<std::size_t>(got) ||
      head[first] != '{') {
    throw Error(ErrorClass::format,
                path.string() + ": bad magic (neither EMB1 nor JSON)");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_embeddings_json(buf.str());
}

// ---------------------------------------------------------------------------
// Splits

CorpusSplit make_split(std::vector<std::string> image_ids, double ref_fraction,
                       double train_fraction, std::uint64_t seed) {
  if (!(ref_fraction > 0.0) || !(train_fraction > 0.0) ||
      ref_fraction + train_fraction > 1.0 + 1e-12) {
    throw Error(ErrorClass::validation,
                "split fractions must be positive and sum to at most 1");
  }
  std::sort(image_ids.begin(), image_ids.end());
  if (std::adjacent_find(image_ids.begin(), image_ids.end()) !=
      image_ids.end()) {
    throw Error(ErrorClass::validation, "duplicate image ids in split input");
  }
  const std::size_t total = image_ids.size();
  if (total < 3) {
    throw Error(ErrorClass::validation,
                "need at least 3 images to split, got " +
                    std::to_string(total));
  }
  Rng rng(seed);
  rng.shuffle(image_ids);

  // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
  auto take = [total](double f) {
    return static_cast<std::size_t>(
        std::floor(f * static_cast<double>(total) + 1e-9));
  };
  const std::size_t n_ref = take(ref_fraction);
  const std::size_t n_train = std::min(take(train_fraction), total - n_ref);

  CorpusSplit split;
  auto it = image_ids.begin();
  split.reference_ids.assign(it, it + n_ref);
  it += n_ref;
  split.train_ids.assign(it, it + n_train);
  it += n_train;
  split.eval_ids.assign(it, image_ids.end());
  std::sort(split.reference_ids.begin(), split.reference_ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.eval_ids.begin(), split.eval_ids.end());
  return split;
}

void write_split(const std::filesystem::path& path, const CorpusSplit& split) {
  ordered_json doc;
  doc["reference_ids"] = split.reference_ids;
  doc["train_ids"] = split.train_ids;
  doc["eval_ids"] = split.eval_ids;
  auto out = open_output(path, std::ios::out | std::ios::binary);
  out << doc.dump(2) << '\n';
}

CorpusSplit read_split(const std::filesystem::path& path) {
  auto in = open_input(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorClass::parse,
                path.string() + ": malformed split manifest: " + e.what());
  }
  CorpusSplit split;
  auto read = [&](const char* key, std::vector<std::string>& dst) {
    if (!doc.contains(key) || !doc[key].is_array()) {
      throw Error(ErrorClass::format,
                  path.string() + ": missing array '" + key + "'");
    }
    dst = doc[key].get<std::vector<std::string>>();
  };
  read("reference_ids", split.reference_ids);
  read("train_ids", split.train_ids);
  read("eval_ids", split.eval_ids);

  std::set<std::string> seen;
  for (const auto* part :
       {&split.reference_ids, &split.train_ids, &split.eval_ids}) {
    for (const auto& id : *part) {
      if (!seen.insert(id).second) {
        throw Error(ErrorClass::validation,
                    path.string() + ": image '" + id +
                        "' appears in more than one split");
      }
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticSpec::validate() const {
  std::vector<std::string> problems;
  if (num_concepts == 0) problems.push_back("num_concepts must be positive");
  if (images_per_concept == 0) {
    problems.push_back("images_per_concept must be positive");
  }
  if (dim < 4) problems.push_back("dim must be at least 4");
  if (!std::isfinite(shift_magnitude) || shift_magnitude < 0) {
    problems.push_back("shift_magnitude must be finite and non-negative");
  }
  if (!std::isfinite(noise_sigma) || noise_sigma < 0) {
    problems.push_back("noise_sigma must be finite and non-negative");
  }
  if (!std::isfinite(image_spread) || image_spread < 0) {
    problems.push_back("image_spread must be finite and non-negative");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::string synthetic_image_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img-%05zu", index);
  return buf;
}

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t dim, double scale) {
  std::vector<double> v(dim);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

void scale_to(std::vector<double>& v, double length) {
  double sq = 0;
  for (double x : v) sq += x * x;
  const double f = length / std::sqrt(sq);
  for (auto& x : v) x *= f;
}

// Orthonormal basis of a random subspace (Gram-Schmidt).
std::vector<std::vector<double>> random_subspace(Rng& rng, std::size_t dim,
                                                 std::size_t rank) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < rank) {
    auto v = gaussian(rng, dim, 1.0);
    for (const auto& b : basis) {
      double d = 0;
      for (std::size_t i = 0; i < dim; ++i) d += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= d * b[i];
    }
    double sq = 0;
    for (double x : v) sq += x * x;
    if (sq < 1e-12) continue;
    scale_to(v, 1.0);
    basis.push_back(std::move(v));
  }
  return basis;
}

std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t dim = spec.dim;
  Rng rng(spec.seed);

  SyntheticCorpus corpus{
      .source_lang = LanguageTag("en"),
      .target_lang = LanguageTag("ja"),
      .images = {},
      .concept_of = {},
      .image_vectors = EmbeddingStore(dim),
      .text_mt = EmbeddingStore(dim),
      .text_native = EmbeddingStore(dim),
      .text_rewrite = EmbeddingStore(dim),
      .captions = {},
  };

  // Images vary around their concept center inside a shared subspace of
  // half the dimension; caption noise is isotropic.
  const auto basis = random_subspace(rng, dim, dim / 2);
  std::vector<std::vector<double>> centers;
  std::vector<std::vector<double>> shifts;
  for (std::size_t c = 0; c < spec.num_concepts; ++c) {
    auto center = gaussian(rng, dim, 1.0);
    scale_to(center, 1.0);
    centers.push_back(std::move(center));
    auto shift = gaussian(rng, dim, 1.0);
    if (spec.shift_magnitude > 0) {
      scale_to(shift, spec.shift_magnitude);
    } else {
      std::fill(shift.begin(), shift.end(), 0.0);
    }
    shifts.push_back(std::move(shift));
  }

  std::size_t index = 0;
  for (std::size_t c = 0; c < spec.num_concepts; ++c) {
    for (std::size_t j = 0; j < spec.images_per_concept; ++j, ++index) {
      const std::string id = synthetic_image_id(index);
      std::vector<double> img = centers[c];
      for (const auto& b : basis) {
        const double w = spec.image_spread * rng.normal();
        for (std::size_t i = 0; i < dim; ++i) img[i] += w * b[i];
      }
      scale_to(img, 1.0);

      const auto mt = add(img, gaussian(rng, dim, spec.noise_sigma));
      const auto native =
          add(add(img, shifts[c]), gaussian(rng, dim, spec.noise_sigma));
      const auto rewrite =
          add(add(img, shifts[c]), gaussian(rng, dim, spec.noise_sigma));

      corpus.images.push_back({id, "synthetic://" + id});
      corpus.concept_of[id] = c;
      corpus.image_vectors.add(id, std::span<const double>(img));
      corpus.text_mt.add(id + ".en@mt", std::span<const double>(mt));
      corpus.text_native.add(id + ".native", std::span<const double>(native));
      corpus.text_rewrite.add(id + ".en@targeted",
                              std::span<const double>(rewrite));

      const std::string subject = "item " + std::to_string(j) +
                                  " of concept " + std::to_string(c);
      corpus.captions.push_back({id + ".en", id, corpus.source_lang,
                                 CaptionSource::native,
                                 "A photo showing " + subject + "."});
      corpus.captions.push_back({id + ".en@mt", id, corpus.target_lang,
                                 CaptionSource::machine_translated,
                                 "[ja] A photo showing " + subject + "."});
      corpus.captions.push_back({id + ".native", id, corpus.target_lang,
                                 CaptionSource::native,
                                 "A native view of " + subject + "."});
    }
  }

  // Untargeted rewrites carry no native shift; drawn from their own stream
  // so the main corpus does not depend on them.
  Rng extra(derive_seed(spec.seed, "untargeted-rewrites"));
  for (const auto& image : corpus.images) {
    const auto v = corpus.image_vectors.vector(image.image_id);
    const std::vector<double> img(v.begin(), v.end());
    for (const char* strategy : {"paraphrase", "diverse"}) {
      const auto r = add(img, gaussian(extra, dim, spec.noise_sigma));
      corpus.text_rewrite.add(image.image_id + ".en@" + strategy,
                              std::span<const double>(r));
    }
  }
  return corpus;
}

}  // namespace xrecap

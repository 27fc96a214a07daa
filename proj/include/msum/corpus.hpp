#pragma once

// Entity/review data model, JSONL ingestion, and construction of
// self-supervised training pairs.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "msum/vocab.hpp"

namespace msum {

struct CorpusSpec {
  double rating_min = 1.0;
  double rating_max = 5.0;
  size_t max_tokens = 128;  // l_D
  size_t max_images = 10;   // M_max
  size_t max_fields = 256;  // l_T_max
};

struct Review {
  std::vector<int> tokens;  // <bos> ... <eos>, length <= l_D
  double rating = 0.0;
  std::string text;
};

struct RasterImage {
  int channels = 0, height = 0, width = 0;
  std::vector<float> pixels;  // row-major (c, h, w)

  size_t expected_size() const {
    return static_cast<size_t>(channels) * height * width;
  }
};

struct HoursValue {
  double open = 0.0, close = 0.0;
};

enum class FieldKind { Nominal, Binary, Ordinal, Numeric, Categorical, Hours };

struct FieldValue {
  FieldKind kind = FieldKind::Nominal;
  std::string text;                       // nominal / ordinal word
  bool flag = false;                      // binary
  double number = 0.0;                    // numeric
  std::vector<std::string> categories;    // categorical
  HoursValue hours;                       // hours
};

struct TableField {
  std::string name;
  FieldValue value;
};

struct TableData {
  std::vector<TableField> fields;
  bool empty() const { return fields.empty(); }
};

struct Entity {
  std::string id;
  std::vector<Review> reviews;
  std::vector<RasterImage> images;
  TableData table;
};

struct TrainingPair {
  std::vector<Review> sources;  // R_{-j}, corpus order
  Review target;                // d_j
  double sd = 0.0;              // mean(source ratings) - target rating
};

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSONL serialization

namespace detail {

inline FieldKind field_kind_from_string(const std::string& s) {
  if (s == "nominal") return FieldKind::Nominal;
  if (s == "binary") return FieldKind::Binary;
  if (s == "ordinal") return FieldKind::Ordinal;
  if (s == "numeric") return FieldKind::Numeric;
  if (s == "categorical") return FieldKind::Categorical;
  if (s == "hours") return FieldKind::Hours;
  throw CorpusError("unknown field-value type '" + s + "'");
}

inline const char* field_kind_to_string(FieldKind k) {
  switch (k) {
    case FieldKind::Nominal: return "nominal";
    case FieldKind::Binary: return "binary";
    case FieldKind::Ordinal: return "ordinal";
    case FieldKind::Numeric: return "numeric";
    case FieldKind::Categorical: return "categorical";
    case FieldKind::Hours: return "hours";
  }
  throw CorpusError("bad field kind");
}

inline RasterImage image_from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open image file '" + path + "'");
  int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw CorpusError("truncated image header in '" + path + "'");
  RasterImage img;
  img.channels = dims[0];
  img.height = dims[1];
  img.width = dims[2];
  img.pixels.resize(img.expected_size());
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (!in) throw CorpusError("truncated image data in '" + path + "'");
  return img;
}

inline RasterImage image_from_json(const nlohmann::json& j) {
  if (j.is_string()) return image_from_file(j.get<std::string>());
  RasterImage img;
  auto shape = j.at("shape");
  img.channels = shape.at(0).get<int>();
  img.height = shape.at(1).get<int>();
  img.width = shape.at(2).get<int>();
  for (const auto& v : j.at("data")) img.pixels.push_back(v.get<float>());
  if (img.pixels.size() != img.expected_size())
    throw CorpusError("image data size does not match shape");
  return img;
}

inline nlohmann::json image_to_json(const RasterImage& img) {
  nlohmann::json j;
  j["shape"] = {img.channels, img.height, img.width};
  j["data"] = img.pixels;
  return j;
}

inline TableField field_from_json(const nlohmann::json& j) {
  TableField f;
  f.name = j.at("name").get<std::string>();
  f.value.kind = field_kind_from_string(j.at("type").get<std::string>());
  const auto& v = j.at("value");
  switch (f.value.kind) {
    case FieldKind::Nominal:
    case FieldKind::Ordinal:
      f.value.text = v.get<std::string>();
      break;
    case FieldKind::Binary:
      f.value.flag = v.get<bool>();
      break;
    case FieldKind::Numeric:
      f.value.number = v.get<double>();
      break;
    case FieldKind::Categorical:
      for (const auto& c : v) f.value.categories.push_back(c.get<std::string>());
      break;
    case FieldKind::Hours:
      f.value.hours.open = v.at(0).get<double>();
      f.value.hours.close = v.at(1).get<double>();
      break;
  }
  return f;
}

inline nlohmann::json field_to_json(const TableField& f) {
  nlohmann::json j;
  j["name"] = f.name;
  j["type"] = field_kind_to_string(f.value.kind);
  switch (f.value.kind) {
    case FieldKind::Nominal:
    case FieldKind::Ordinal: j["value"] = f.value.text; break;
    case FieldKind::Binary: j["value"] = f.value.flag; break;
    case FieldKind::Numeric: j["value"] = f.value.number; break;
    case FieldKind::Categorical: j["value"] = f.value.categories; break;
    case FieldKind::Hours:
      j["value"] = {f.value.hours.open, f.value.hours.close};
      break;
  }
  return j;
}

}  // namespace detail

inline Entity entity_from_json(const nlohmann::json& j, const Vocab& vocab,
                               const CorpusSpec& spec) {
  Entity e;
  e.id = j.at("id").get<std::string>();
  for (const auto& rj : j.at("reviews")) {
    Review r;
    r.text = rj.at("text").get<std::string>();
    r.rating = rj.at("rating").get<double>();
    if (r.rating < spec.rating_min || r.rating > spec.rating_max) {
      std::ostringstream os;
      os << "rating " << r.rating << " outside range [" << spec.rating_min
         << ", " << spec.rating_max << "]";
      throw CorpusError(os.str());
    }
    r.tokens = vocab.encode(r.text, spec.max_tokens);
    e.reviews.push_back(std::move(r));
  }
  if (e.reviews.empty()) throw CorpusError("entity '" + e.id + "' has no reviews");
  if (j.contains("images"))
    for (const auto& ij : j["images"]) {
      if (e.images.size() >= spec.max_images) break;
      e.images.push_back(detail::image_from_json(ij));
    }
  if (j.contains("table")) {
    for (const auto& fj : j["table"]) {
      auto f = detail::field_from_json(fj);
      if (f.name.empty()) throw CorpusError("empty field name");
      e.table.fields.push_back(std::move(f));
    }
    if (e.table.fields.size() > spec.max_fields)
      throw CorpusError("entity '" + e.id + "' exceeds max table fields");
  }
  return e;
}

inline nlohmann::json entity_to_json(const Entity& e) {
  nlohmann::json j;
  j["id"] = e.id;
  j["reviews"] = nlohmann::json::array();
  for (const auto& r : e.reviews)
    j["reviews"].push_back({{"text", r.text}, {"rating", r.rating}});
  j["images"] = nlohmann::json::array();
  for (const auto& img : e.images) j["images"].push_back(detail::image_to_json(img));
  j["table"] = nlohmann::json::array();
  for (const auto& f : e.table.fields) j["table"].push_back(detail::field_to_json(f));
  return j;
}

inline std::vector<Entity> load_corpus(const std::string& path,
                                       const Vocab& vocab,
                                       const CorpusSpec& spec = {}) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file '" + path + "'");
  std::vector<Entity> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(entity_from_json(nlohmann::json::parse(line), vocab, spec));
    } catch (const std::exception& ex) {
      std::ostringstream os;
      os << path << ":" << lineno << ": " << ex.what();
      throw CorpusError(os.str());
    }
  }
  return out;
}

inline void save_corpus(const std::string& path,
                        const std::vector<Entity>& entities) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot open '" + path + "' for writing");
  for (const auto& e : entities) out << entity_to_json(e).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Training-pair construction

// One pair per review: review j becomes the pseudo summary, the rest are the
// sources in corpus order. sd = mean(source ratings) - target rating.
inline std::vector<TrainingPair> build_leave_one_out_pairs(const Entity& e) {
  const size_t n = e.reviews.size();
  if (n < 2)
    throw CorpusError("entity '" + e.id +
                      "' has fewer than 2 reviews; cannot build pairs");
  double rating_sum = 0.0;
  for (const auto& r : e.reviews) rating_sum += r.rating;
  std::vector<TrainingPair> pairs;
  pairs.reserve(n);
  for (size_t j = 0; j < n; ++j) {
    TrainingPair p;
    for (size_t i = 0; i < n; ++i)
      if (i != j) p.sources.push_back(e.reviews[i]);
    p.target = e.reviews[j];
    p.sd = (rating_sum - e.reviews[j].rating) / static_cast<double>(n - 1) -
           e.reviews[j].rating;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

struct SingleReferencePair {
  const Entity* entity = nullptr;  // supplies images and table
  Review target;
};

// Each review becomes the sole target of one pair sharing the entity's
// non-text inputs. Shuffling across entities is the caller's job.
inline std::vector<SingleReferencePair> flatten_multireference(const Entity& e) {
  std::vector<SingleReferencePair> out;
  out.reserve(e.reviews.size());
  for (const auto& r : e.reviews) out.push_back({&e, r});
  return out;
}

}  // namespace msum

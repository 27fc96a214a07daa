#pragma once

// Deterministic synthetic corpus. Every review follows a fixed three-sentence
// template; the entity-specific content words are tied to latent attributes:
//
//   <bos> the CAT in AREA was QUAL . the SPEC tasted FILL1 . the COL DISH
//   were FILL2 . <eos>
//
// CAT and AREA come from nominal table fields and appear verbatim in every
// review, so positions 2 and 4 are recoverable from the table or from the
// other reviews. FILL2 is fixed per entity and appears nowhere in the table,
// so it rewards copying from the source reviews. SPEC and DISH are nominal
// table fields whose slots show the true value only with probability 1/2 and
// a uniformly random decoy otherwise: the table is the only reliable
// predictor for those slots, which is what the gate acceptance check leans
// on. COL (position 14) is carried by the image class. QUAL follows the
// per-review rating and FILL1 is noise. The remaining table fields (payment,
// price, delivery, price range, hours) are drawn independently of the text
// so they carry no predictive signal.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "msum/corpus.hpp"

namespace msum {

struct SynthConfig {
  int entities = 200;
  int reviews_per_entity = 9;
  int images_per_entity = 2;
  int image_size = 32;
  size_t vocab_size = 1000;
  size_t max_tokens = 32;
};

// Token positions (bos = 0) whose words are determined by table fields.
inline std::vector<int> synth_table_token_positions() { return {2, 4, 9, 15}; }

// Subset of the above that no other review reveals reliably: the decoy slots.
inline std::vector<int> synth_table_only_token_positions() { return {9, 15}; }

// Chance a review shows an entity's true decoy-slot value instead of a decoy.
inline double synth_specialty_fidelity() { return 0.5; }

// Token position carried by the image class.
inline int synth_image_token_position() { return 14; }

namespace synthwords {

inline const std::vector<std::string>& categories() {
  static const std::vector<std::string> v = {
      "bistro", "diner", "bakery", "cantina", "brasserie", "pub",
      "cafe",   "grill", "tavern", "deli",    "pizzeria",  "noodlebar"};
  return v;
}

inline const std::vector<std::string>& specialties() {
  static const std::vector<std::string> v = {
      "waffles",  "tacos",    "dumplings", "ramen",    "falafel",  "paella",
      "risotto",  "goulash",  "ceviche",   "pierogi",  "gumbo",    "katsu",
      "tagine",   "bibimbap", "pho",       "empanadas", "schnitzel", "congee",
      "burritos", "samosas",  "crepes",    "pretzels", "churros",  "scones"};
  return v;
}

inline const std::vector<std::string>& colors() {
  static const std::vector<std::string> v = {"red",    "green", "blue",
                                             "yellow", "purple", "white"};
  return v;
}

inline const std::vector<std::string>& qualities() {
  static const std::vector<std::string> v = {"terrible", "bad", "okay", "good",
                                             "great"};
  return v;
}

inline const std::vector<std::string>& fillers() {
  static const std::vector<std::string> v = {
      "honestly",  "somewhat", "really",  "fairly",   "quite",   "rather",
      "amazing",   "bland",    "fresh",   "salty",    "crispy",  "smoky",
      "tender",    "zesty",    "rich",    "mild",     "sharp",   "subtle",
      "divine",    "decent",   "odd",     "lovely",   "plain",   "bold",
      "earthy",    "sweet",    "bitter",  "savory",   "fine",    "superb"};
  return v;
}

inline const std::vector<std::string>& areas() {
  static const std::vector<std::string> v = {
      "midtown",   "chinatown", "riverside", "lakeview",  "hillcrest",
      "oldtown",   "westside",  "eastside",  "uptown",    "downtown",
      "harborside", "greenfield", "brookside", "northgate", "southport",
      "fairview",  "kingsland", "maplewood", "cedarville", "elmhurst",
      "ironworks", "docklands", "parkside",  "stonebridge", "willowdale",
      "ashford",   "bayfront",  "claremont", "dunmore",   "evergreen"};
  return v;
}

inline const std::vector<std::string>& dishes() {
  static const std::vector<std::string> v = {
      "noodles",  "plates",   "bowls",    "skewers",  "rolls",    "buns",
      "wraps",    "sliders",  "fritters", "pastries", "salads",   "soups",
      "stews",    "pies",     "tarts",    "toasts",   "omelets",  "pancakes",
      "biscuits", "muffins",  "kebabs",   "patties",  "crostini", "flatbreads",
      "sandwiches", "cutlets", "meatballs", "pickles", "relishes", "spreads"};
  return v;
}

inline const std::vector<std::string>& payments() {
  static const std::vector<std::string> v = {"cash", "card", "mobile",
                                             "voucher"};
  return v;
}

inline const std::vector<std::string>& ordinals() {
  static const std::vector<std::string> v = {"cheap", "average", "expensive",
                                             "very expensive"};
  return v;
}

}  // namespace synthwords

namespace detail {

inline RasterImage synth_image(int size, int color_class, std::mt19937_64& rng) {
  // Solid channel pattern per class with mild noise.
  static const float palette[6][3] = {{0.9f, 0.1f, 0.1f}, {0.1f, 0.9f, 0.1f},
                                      {0.1f, 0.1f, 0.9f}, {0.9f, 0.9f, 0.1f},
                                      {0.6f, 0.1f, 0.8f}, {0.9f, 0.9f, 0.9f}};
  std::uniform_real_distribution<float> noise(-0.05f, 0.05f);
  RasterImage img;
  img.channels = 3;
  img.height = size;
  img.width = size;
  img.pixels.resize(img.expected_size());
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < size * size; ++i) {
      float v = palette[color_class][c] + noise(rng);
      img.pixels[static_cast<size_t>(c * size * size + i)] =
          std::clamp(v, 0.0f, 1.0f);
    }
  return img;
}

}  // namespace detail

inline std::vector<Entity> generate_synthetic_corpus(const SynthConfig& cfg,
                                                     uint64_t seed) {
  if (cfg.entities < 1 || cfg.reviews_per_entity < 2)
    throw CorpusError("synthetic corpus needs >= 1 entities with >= 2 reviews");
  using namespace synthwords;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cat_d(0, static_cast<int>(categories().size()) - 1);
  std::uniform_int_distribution<int> spec_d(0, static_cast<int>(specialties().size()) - 1);
  std::uniform_int_distribution<int> col_d(0, static_cast<int>(colors().size()) - 1);
  std::uniform_int_distribution<int> fill_d(0, static_cast<int>(fillers().size()) - 1);
  std::uniform_int_distribution<int> base_d(1, 5);
  std::uniform_int_distribution<int> jitter_d(-1, 1);
  std::uniform_real_distribution<double> price_d(1.0, 60.0);
  std::uniform_int_distribution<int> pay_d(
      0, static_cast<int>(payments().size()) - 1);
  std::uniform_int_distribution<int> ord_d(0, 3);
  std::uniform_int_distribution<int> flag_d(0, 1);
  std::uniform_real_distribution<double> open_d(6.0, 12.0);
  std::uniform_real_distribution<double> close_d(16.0, 24.0);

  std::vector<Entity> out;
  out.reserve(static_cast<size_t>(cfg.entities));
  for (int e = 0; e < cfg.entities; ++e) {
    Entity ent;
    ent.id = "synth-" + std::to_string(e);
    const std::string cat = categories()[static_cast<size_t>(cat_d(rng))];
    const std::string spec = specialties()[static_cast<size_t>(spec_d(rng))];
    const int color_class = col_d(rng);
    const std::string col = colors()[static_cast<size_t>(color_class)];
    const int base = base_d(rng);
    std::uniform_int_distribution<int> area_d(
        0, static_cast<int>(areas().size()) - 1);
    std::uniform_int_distribution<int> dish_d(
        0, static_cast<int>(dishes().size()) - 1);
    const std::string area = areas()[static_cast<size_t>(area_d(rng))];
    const std::string dish = dishes()[static_cast<size_t>(dish_d(rng))];
    const std::string f2 = fillers()[static_cast<size_t>(fill_d(rng))];

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // A true decoy-slot value shows up in only half the reviews; the rest
    // carry a uniformly random decoy, so those slots cannot be copied
    // reliably from the other reviews of the entity.
    auto shown = [&](const std::string& truth,
                     const std::vector<std::string>& pool) {
      if (unit(rng) < synth_specialty_fidelity()) return truth;
      std::uniform_int_distribution<int> d(0,
                                           static_cast<int>(pool.size()) - 2);
      const auto& w = pool[static_cast<size_t>(d(rng))];
      return w == truth ? pool[pool.size() - 1] : w;
    };
    for (int r = 0; r < cfg.reviews_per_entity; ++r) {
      double rating =
          std::clamp(static_cast<double>(base) + 0.5 * jitter_d(rng), 1.0, 5.0);
      const std::string qual =
          qualities()[static_cast<size_t>(std::lround(rating)) - 1];
      const std::string f1 = fillers()[static_cast<size_t>(fill_d(rng))];
      Review rev;
      rev.text = "the " + cat + " in " + area + " was " + qual + " . the " +
                 shown(spec, specialties()) + " tasted " + f1 + " . the " +
                 col + " " + shown(dish, dishes()) + " were " + f2 + " .";
      rev.rating = rating;
      ent.reviews.push_back(std::move(rev));
    }

    for (int i = 0; i < cfg.images_per_entity; ++i)
      ent.images.push_back(detail::synth_image(cfg.image_size, color_class, rng));

    TableField category_f{"category", {}};
    category_f.value.kind = FieldKind::Nominal;
    category_f.value.text = cat;
    TableField area_f{"area", {}};
    area_f.value.kind = FieldKind::Nominal;
    area_f.value.text = area;
    TableField specialty_f{"specialty", {}};
    specialty_f.value.kind = FieldKind::Nominal;
    specialty_f.value.text = spec;
    TableField dish_f{"dish", {}};
    dish_f.value.kind = FieldKind::Nominal;
    dish_f.value.text = dish;
    TableField payment_f{"payment", {}};
    payment_f.value.kind = FieldKind::Categorical;
    payment_f.value.categories = {
        payments()[static_cast<size_t>(pay_d(rng))]};
    TableField price_f{"price", {}};
    price_f.value.kind = FieldKind::Numeric;
    price_f.value.number = std::round(price_d(rng) * 2.0) / 2.0;
    TableField delivery_f{"delivery", {}};
    delivery_f.value.kind = FieldKind::Binary;
    delivery_f.value.flag = flag_d(rng) == 1;
    TableField range_f{"price range", {}};
    range_f.value.kind = FieldKind::Ordinal;
    range_f.value.text = ordinals()[static_cast<size_t>(ord_d(rng))];
    TableField hours_f{"hours", {}};
    hours_f.value.kind = FieldKind::Hours;
    hours_f.value.hours = {open_d(rng), close_d(rng)};
    ent.table.fields = {category_f, area_f,     specialty_f,
                        dish_f,     payment_f,  price_f,
                        delivery_f, range_f,    hours_f};
    out.push_back(std::move(ent));
  }
  return out;
}

// All review texts of a corpus, for vocabulary building.
inline std::vector<std::string> corpus_texts(const std::vector<Entity>& entities) {
  std::vector<std::string> out;
  for (const auto& e : entities)
    for (const auto& r : e.reviews) out.push_back(r.text);
  return out;
}

// Sorted unique categorical values over all table fields.
inline std::vector<std::string> collect_categories(
    const std::vector<Entity>& entities) {
  std::set<std::string> s;
  for (const auto& e : entities)
    for (const auto& f : e.table.fields)
      if (f.value.kind == FieldKind::Categorical)
        for (const auto& c : f.value.categories) s.insert(c);
  return {s.begin(), s.end()};
}

// Fills review token ids in place.
inline void tokenize_corpus(std::vector<Entity>& entities, const Vocab& vocab,
                            const CorpusSpec& spec) {
  for (auto& e : entities)
    for (auto& r : e.reviews) r.tokens = vocab.encode(r.text, spec.max_tokens);
}

}  // namespace msum

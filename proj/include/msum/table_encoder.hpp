#pragma once

// Metadata-table encoder: field (name, value) pairs are embedded, passed
// through a shared MLP, and projected into the decoder width.
//
// Scalar values are encoded in fixed-point binary over places 2^9 .. 2^-1
// after rounding to the nearest 0.5; opening hours are snapped to one of
// four (open, close) centroids.

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msum/corpus.hpp"
#include "msum/tensor.hpp"
#include "msum/vocab.hpp"

namespace msum {

inline constexpr int kRatingDigits = 4;   // places 2^2 .. 2^-1
inline constexpr int kPriceDigits = 11;   // places 2^9 .. 2^-1
inline constexpr int kNumPlaces = 11;     // shared place-embedding rows
inline constexpr int kHourClusters = 4;

// Paper-supplied (open, close) centroids.
inline const std::array<std::array<double, 2>, kHourClusters>
    kDefaultHourCentroids = {{{16.5, 23.2}, {8.7, 17.1}, {6.4, 23.0}, {10.6, 22.6}}};

// Round to the nearest 0.5, halves away from zero.
inline double round_half(double x) { return std::round(x * 2.0) / 2.0; }

// Digits from the highest place down to 2^-1. highest_power = 2 gives the
// 4-digit rating encoding, 9 gives the 11-digit price encoding.
inline std::vector<int> encode_scalar_binary(double x, int highest_power) {
  const int digits = highest_power + 2;
  double r = round_half(x);
  if (r < 0.0) throw CorpusError("negative scalar in binary encoding");
  long twice = static_cast<long>(std::llround(r * 2.0));
  if (twice >= (1L << digits))
    throw CorpusError("scalar " + std::to_string(x) +
                      " overflows " + std::to_string(digits) + "-digit encoding");
  std::vector<int> out(static_cast<size_t>(digits));
  for (int i = 0; i < digits; ++i) {
    int power = highest_power - i;  // bit (power + 1) of 2*x
    out[static_cast<size_t>(i)] = static_cast<int>((twice >> (power + 1)) & 1);
  }
  return out;
}

inline std::vector<int> encode_rating_binary(double rating) {
  return encode_scalar_binary(rating, 2);
}

inline std::vector<int> encode_price_binary(double price) {
  return encode_scalar_binary(price, 9);
}

// Index of the Euclidean-nearest centroid; ties break to the lowest index.
inline int assign_hour_cluster(
    double open, double close,
    const std::array<std::array<double, 2>, kHourClusters>& centroids =
        kDefaultHourCentroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kHourClusters; ++i) {
    double dx = open - centroids[static_cast<size_t>(i)][0];
    double dy = close - centroids[static_cast<size_t>(i)][1];
    double d = dx * dx + dy * dy;
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

struct TableParams {
  NodePtr w_f;                // (2e_T x e_T)
  NodePtr b_f;                // (1 x e_T)
  NodePtr w_table;            // (e_T x e_D)
  NodePtr tok_emb;            // (vocab x e_T) field name / word value rows
  NodePtr place_emb;          // (kNumPlaces x e_T); row i holds place 2^(9-i)
  NodePtr hour_emb;           // (kHourClusters x e_T)
  NodePtr cat_emb;            // (num categories x e_T)
  std::map<std::string, int> cat_ids;

  // The encoder width e_T is independent of the decoder width e_D; a wide
  // e_T with unit-scale value embeddings keeps h_table near the scale of the
  // text encodings and gives stage 2's fixed step budget enough leverage to
  // reshape the rows through the frozen decoder.
  static TableParams init(int e_t, int e_d, size_t vocab_size,
                          const std::vector<std::string>& categories,
                          std::mt19937_64& rng, double emb_std = 0.5,
                          double w_std = 0.06) {
    auto randn = [&](Eigen::Index r, Eigen::Index c, double stddev) {
      std::normal_distribution<double> d(0.0, stddev);
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
      return m;
    };
    TableParams p;
    p.w_f = make_param(randn(2 * e_t, e_t, w_std));
    p.b_f = make_param(Mat::Zero(1, e_t));
    p.w_table = make_param(randn(e_t, e_d, w_std));
    p.tok_emb = make_param(
        randn(std::max<Eigen::Index>(1, static_cast<Eigen::Index>(vocab_size)),
              e_t, emb_std));
    p.place_emb = make_param(randn(kNumPlaces, e_t, emb_std));
    p.hour_emb = make_param(randn(kHourClusters, e_t, emb_std));
    p.cat_emb = make_param(randn(
        std::max<Eigen::Index>(1, static_cast<Eigen::Index>(categories.size())),
        e_t, emb_std));
    for (size_t i = 0; i < categories.size(); ++i)
      p.cat_ids[categories[i]] = static_cast<int>(i);
    return p;
  }

  std::vector<std::pair<std::string, NodePtr>> named_params() const {
    return {{"table.w_f", w_f},           {"table.b_f", b_f},
            {"table.w_table", w_table},   {"table.tok_emb", tok_emb},
            {"table.place_emb", place_emb}, {"table.hour_emb", hour_emb},
            {"table.cat_emb", cat_emb}};
  }
};

namespace detail {

// Sum of shared token embeddings over the words of a phrase; all-unknown
// phrases fall through to the <unk> embedding.
inline NodePtr embed_phrase(Tape& tape, const std::string& phrase,
                            const NodePtr& token_emb, const Vocab& vocab) {
  std::vector<int> ids;
  for (const auto& w : Vocab::split_words(phrase)) ids.push_back(vocab.id(w));
  if (ids.empty()) ids.push_back(Vocab::kUnk);
  auto rows = tape.gather_rows(token_emb, ids);
  auto ones = tape.constant(Mat::Ones(1, static_cast<Eigen::Index>(ids.size())));
  return tape.matmul(ones, rows);
}

inline NodePtr embed_places(Tape& tape, const std::vector<int>& digits,
                            const TableParams& params, Eigen::Index width) {
  // digits run from the highest place down to 2^-1; place_emb row i is the
  // place 2^(9-i), so digit j of a highest_power=h encoding maps to row
  // 9 - (h - j).
  const int h = static_cast<int>(digits.size()) - 2;
  std::vector<int> rows;
  for (size_t j = 0; j < digits.size(); ++j)
    if (digits[j]) rows.push_back(9 - (h - static_cast<int>(j)));
  if (rows.empty()) return tape.constant(Mat::Zero(1, width));
  auto gathered = tape.gather_rows(params.place_emb, rows);
  auto ones = tape.constant(Mat::Ones(1, static_cast<Eigen::Index>(rows.size())));
  return tape.matmul(ones, gathered);
}

}  // namespace detail

// (1 x e) embedding of one field value.
inline NodePtr embed_field_value(
    Tape& tape, const FieldValue& value, const TableParams& params,
    const NodePtr& token_emb, const Vocab& vocab,
    const std::array<std::array<double, 2>, kHourClusters>& centroids =
        kDefaultHourCentroids) {
  const Eigen::Index e = params.w_table->value.rows();
  switch (value.kind) {
    case FieldKind::Nominal:
    case FieldKind::Ordinal:
      return detail::embed_phrase(tape, value.text, token_emb, vocab);
    case FieldKind::Binary:
      return detail::embed_phrase(tape, value.flag ? "true" : "false",
                                  token_emb, vocab);
    case FieldKind::Numeric:
      return detail::embed_places(tape, encode_price_binary(value.number),
                                  params, e);
    case FieldKind::Categorical: {
      if (value.categories.empty())
        throw CorpusError("categorical field with no categories");
      std::vector<int> rows;
      for (const auto& c : value.categories) {
        auto it = params.cat_ids.find(c);
        if (it == params.cat_ids.end())
          throw CorpusError("unknown categorical id '" + c + "'");
        rows.push_back(it->second);
      }
      auto gathered = tape.gather_rows(params.cat_emb, rows);
      auto ones = tape.constant(
          Mat::Ones(1, static_cast<Eigen::Index>(rows.size())));
      return tape.scale(tape.matmul(ones, gathered),
                        1.0 / static_cast<double>(rows.size()));
    }
    case FieldKind::Hours: {
      int cluster =
          assign_hour_cluster(value.hours.open, value.hours.close, centroids);
      return tape.gather_rows(params.hour_emb, {cluster});
    }
  }
  throw CorpusError("bad field kind");
}

// h_table: (l_T x e_D). Row k = ReLU([n_k; v_k] W_f + b_f) W_table.
inline NodePtr encode_table(
    Tape& tape, const TableData& table, const TableParams& params,
    const NodePtr& token_emb, const Vocab& vocab, size_t max_fields = 256,
    const std::array<std::array<double, 2>, kHourClusters>& centroids =
        kDefaultHourCentroids) {
  if (table.empty()) throw CorpusError("encode_table: empty table");
  if (table.fields.size() > max_fields)
    throw CorpusError("table exceeds max field count");
  std::vector<NodePtr> rows;
  for (const auto& f : table.fields) {
    auto name = detail::embed_phrase(tape, f.name, token_emb, vocab);
    auto val =
        embed_field_value(tape, f.value, params, token_emb, vocab, centroids);
    rows.push_back(tape.concat_cols(name, val));
  }
  auto nv = tape.concat_rows(rows);
  auto f = tape.relu(tape.add_rowvec(tape.matmul(nv, params.w_f), params.b_f));
  return tape.matmul(f, params.w_table);
}

}  // namespace msum

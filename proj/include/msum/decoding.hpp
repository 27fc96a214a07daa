#pragma once

// Beam search with early stopping, trigram-repeat blocking, and length
// penalty. Hypotheses are ranked by sum-log-prob / len^lp. The search is
// generic over a scorer: any callable mapping a token prefix to next-token
// log-probabilities.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msum/model.hpp"
#include "msum/vocab.hpp"

namespace msum {

struct DecodeConfig {
  int beam_size = 4;
  double length_penalty = 0.97;
  int max_len = 105;
  bool early_stopping = true;

  static DecodeConfig yelp() { return {4, 0.97, 105, true}; }
  static DecodeConfig amazon() { return {2, 0.9, 80, true}; }
};

struct DecodeResult {
  std::vector<int> tokens;  // includes <bos> and, when finished, <eos>
  double score = 0.0;       // sum of token log-probs
  bool pruned_fallback = false;
};

using StepScorer = std::function<Eigen::VectorXd(const std::vector<int>&)>;

namespace detail {

// True if appending next to prefix would repeat a trigram already present.
inline bool repeats_trigram(const std::vector<int>& prefix, int next) {
  const size_t n = prefix.size();
  if (n < 2) return false;
  int a = prefix[n - 2], b = prefix[n - 1];
  for (size_t i = 0; i + 2 < n; ++i)
    if (prefix[i] == a && prefix[i + 1] == b && prefix[i + 2] == next)
      return true;
  return false;
}

inline double penalized(double score, size_t generated, double lp) {
  return score / std::pow(static_cast<double>(std::max<size_t>(1, generated)),
                          lp);
}

}  // namespace detail

// Ranking rule exposed for direct checks: sum-log-prob / len^lp.
inline double hypothesis_score(double sum_log_prob, size_t length,
                               double length_penalty) {
  return detail::penalized(sum_log_prob, length, length_penalty);
}

inline DecodeResult beam_search(const StepScorer& scorer,
                                const DecodeConfig& cfg,
                                int bos = Vocab::kBos, int eos = Vocab::kEos) {
  if (cfg.beam_size < 1) throw std::invalid_argument("beam size must be >= 1");
  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
  };
  std::vector<Hyp> beam{{{bos}, 0.0}};
  std::vector<Hyp> finished;
  Hyp best_prefix = beam[0];
  double best_prefix_pen = -std::numeric_limits<double>::infinity();
  bool pruned_any = false;

  for (int step = 0; step < cfg.max_len; ++step) {
    struct Cand {
      size_t hyp;
      int token;
      double score;
    };
    std::vector<Cand> cands;
    for (size_t h = 0; h < beam.size(); ++h) {
      Eigen::VectorXd logp = scorer(beam[h].tokens);
      for (Eigen::Index t = 0; t < logp.size(); ++t) {
        if (detail::repeats_trigram(beam[h].tokens, static_cast<int>(t))) {
          pruned_any = true;
          continue;
        }
        cands.push_back({h, static_cast<int>(t), beam[h].score + logp(t)});
      }
    }
    if (cands.empty()) {
      // Every extension would repeat a trigram: fall back to the best prefix.
      DecodeResult r;
      r.tokens = best_prefix.tokens;
      r.score = best_prefix.score;
      r.pruned_fallback = true;
      return r;
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });

    std::vector<Hyp> next;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) >= cfg.beam_size) break;
      Hyp h = beam[c.hyp];
      h.tokens.push_back(c.token);
      h.score = c.score;
      if (c.token == eos) {
        finished.push_back(h);
        continue;
      }
      double pen = detail::penalized(h.score, h.tokens.size() - 1,
                                     cfg.length_penalty);
      if (pen > best_prefix_pen) {
        best_prefix_pen = pen;
        best_prefix = h;
      }
      next.push_back(std::move(h));
    }
    if (next.empty()) break;
    beam = std::move(next);

    if (cfg.early_stopping &&
        static_cast<int>(finished.size()) >= cfg.beam_size) {
      double worst_fin = std::numeric_limits<double>::infinity();
      for (const auto& f : finished)
        worst_fin = std::min(worst_fin,
                             detail::penalized(f.score, f.tokens.size() - 1,
                                               cfg.length_penalty));
      double best_unf = -std::numeric_limits<double>::infinity();
      for (const auto& h : beam)
        best_unf = std::max(best_unf,
                            detail::penalized(h.score, h.tokens.size() - 1,
                                              cfg.length_penalty));
      if (best_unf <= worst_fin) break;
    }
  }

  // Hypotheses still open at max length complete without <eos>.
  for (const auto& h : beam) finished.push_back(h);
  DecodeResult r;
  if (finished.empty()) {
    r.tokens = best_prefix.tokens;
    r.score = best_prefix.score;
    r.pruned_fallback = true;
    return r;
  }
  const Hyp* best = nullptr;
  double best_pen = -std::numeric_limits<double>::infinity();
  for (const auto& f : finished) {
    double pen =
        detail::penalized(f.score, f.tokens.size() - 1, cfg.length_penalty);
    if (pen > best_pen) {
      best_pen = pen;
      best = &f;
    }
  }
  r.tokens = best->tokens;
  r.score = best->score;
  r.pruned_fallback = false;
  return r;
}

// Argmax decoding under the same trigram rule; beam size 1 matches this.
inline DecodeResult greedy_decode(const StepScorer& scorer,
                                  const DecodeConfig& cfg,
                                  int bos = Vocab::kBos, int eos = Vocab::kEos) {
  DecodeConfig g = cfg;
  g.beam_size = 1;
  return beam_search(scorer, g, bos, eos);
}

// ---------------------------------------------------------------------------
// Model-backed scoring

// Encodes an instance once and scores prefixes against the frozen blocks.
class ModelScorer {
 public:
  ModelScorer(const Model& model, const std::vector<std::vector<int>>& sources,
              const std::vector<RasterImage>& images, const TableData& table)
      : model_(model) {
    Tape tape;
    EncodedModalities mods = model_.encode(tape, sources, images, table);
    if (!mods.any())
      throw CorpusError("cannot decode: no modality present");
    for (const auto& b : mods.text) text_.push_back(b->value);
    for (const auto& b : mods.image) image_.push_back(b->value);
    if (mods.table) {
      table_ = mods.table->value;
      has_table_ = true;
    }
  }

  Eigen::VectorXd operator()(const std::vector<int>& prefix) const {
    Tape tape;
    auto logp = forward(tape, prefix, nullptr);
    return logp->value.row(logp->value.rows() - 1).transpose();
  }

  // Teacher-forced pass over a full sequence with gate recording.
  GateTrace trace_sequence(const std::vector<int>& tokens) const {
    GateTrace trace;
    Tape tape;
    forward(tape, tokens, &trace);
    return trace;
  }

 private:
  NodePtr forward(Tape& tape, const std::vector<int>& tokens,
                  GateTrace* trace) const {
    EncodedModalities mods;
    for (const auto& b : text_) mods.text.push_back(tape.constant(b));
    for (const auto& b : image_) mods.image.push_back(tape.constant(b));
    if (has_table_) mods.table = tape.constant(table_);
    // Inference always runs at rating deviation 0.
    return forward_log_probs(tape, mods, tokens, 0.0, model_.text, trace);
  }

  const Model& model_;
  std::vector<Mat> text_;
  std::vector<Mat> image_;
  Mat table_;
  bool has_table_ = false;
};

struct SummaryResult {
  std::string text;
  std::vector<int> tokens;
  bool pruned_fallback = false;
};

// Encodes all N reviews, all images, and the table; decodes at sd = 0.
inline SummaryResult generate_summary(const Entity& entity, const Model& model,
                                      const DecodeConfig& cfg) {
  if (entity.reviews.empty())
    throw CorpusError("entity '" + entity.id + "' has no reviews");
  std::vector<std::vector<int>> sources;
  for (const auto& r : entity.reviews) sources.push_back(r.tokens);
  ModelScorer scorer(model, sources, entity.images, entity.table);
  auto res = beam_search(std::cref(scorer), cfg);
  SummaryResult out;
  out.tokens = res.tokens;
  out.pruned_fallback = res.pruned_fallback;
  out.text = model.vocab.decode(res.tokens);
  return out;
}

}  // namespace msum

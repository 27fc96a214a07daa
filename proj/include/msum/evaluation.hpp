#pragma once

// ROUGE-{1,2,L} F1, multi-reference aggregation, paired bootstrap
// significance, and multimodal gate aggregation/export.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msum/decoding.hpp"
#include "msum/vocab.hpp"

namespace msum {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // empty/too-short input

  static RougeScore from_pr(double p, double r) {
    RougeScore s;
    s.precision = p;
    s.recall = r;
    s.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
    return s;
  }
};

// Metric tokenization: lowercase, split on non-alphanumerics, no stemming.
inline std::vector<std::string> metric_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline RougeScore rouge_n(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  auto grams = [n](const std::vector<std::string>& toks) {
    std::map<std::vector<std::string>, long> counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i)
      ++counts[std::vector<std::string>(toks.begin() + static_cast<long>(i),
                                        toks.begin() + static_cast<long>(i) + n)];
    return counts;
  };
  auto cg = grams(candidate);
  auto rg = grams(reference);
  long ctotal = 0, rtotal = 0, overlap = 0;
  for (const auto& [g, c] : cg) ctotal += c;
  for (const auto& [g, c] : rg) rtotal += c;
  if (ctotal == 0 || rtotal == 0) {
    RougeScore s;
    s.degenerate = true;
    return s;
  }
  for (const auto& [g, c] : cg) {
    auto it = rg.find(g);
    if (it != rg.end()) overlap += std::min(c, it->second);
  }
  return RougeScore::from_pr(static_cast<double>(overlap) / ctotal,
                             static_cast<double>(overlap) / rtotal);
}

inline RougeScore rouge_l(const std::vector<std::string>& candidate,
                          const std::vector<std::string>& reference) {
  if (candidate.empty() || reference.empty()) {
    RougeScore s;
    s.degenerate = true;
    return s;
  }
  const size_t m = candidate.size(), n = reference.size();
  std::vector<std::vector<int>> dp(m + 1, std::vector<int>(n + 1, 0));
  for (size_t i = 1; i <= m; ++i)
    for (size_t j = 1; j <= n; ++j)
      dp[i][j] = (candidate[i - 1] == reference[j - 1])
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  double lcs = dp[m][n];
  return RougeScore::from_pr(lcs / static_cast<double>(m),
                             lcs / static_cast<double>(n));
}

enum class RougeVariant { R1, R2, RL };

inline RougeScore rouge_single(const std::vector<std::string>& cand,
                               const std::vector<std::string>& ref,
                               RougeVariant v) {
  switch (v) {
    case RougeVariant::R1: return rouge_n(cand, ref, 1);
    case RougeVariant::R2: return rouge_n(cand, ref, 2);
    case RougeVariant::RL: return rouge_l(cand, ref);
  }
  throw std::invalid_argument("bad rouge variant");
}

// Max-F1 aggregation over references; P/R are taken from the argmax.
inline RougeScore rouge_multi(const std::vector<std::string>& candidate,
                              const std::vector<std::vector<std::string>>& refs,
                              RougeVariant v) {
  if (refs.empty()) throw std::invalid_argument("rouge_multi: no references");
  RougeScore best;
  bool first = true;
  for (const auto& r : refs) {
    auto s = rouge_single(candidate, r, v);
    if (first || s.f1 > best.f1) {
      best = s;
      first = false;
    }
  }
  return best;
}

// Two-sided sign-flip paired bootstrap. Returns the fraction of resampled
// mean differences whose sign opposes (or zeroes) the observed difference;
// an observed difference of 0 reports p = 1.
inline double paired_bootstrap(const std::vector<double>& a,
                               const std::vector<double>& b, int resamples,
                               uint64_t seed) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_bootstrap: length mismatch");
  if (a.empty() || resamples < 1)
    throw std::invalid_argument("paired_bootstrap: empty input");
  const size_t n = a.size();
  double observed = 0.0;
  for (size_t i = 0; i < n; ++i) observed += a[i] - b[i];
  observed /= static_cast<double>(n);
  if (observed == 0.0) return 1.0;
  std::mt19937_64 rng(seed);
  int flips = 0;
  for (int r = 0; r < resamples; ++r) {
    double d = 0.0;
    for (size_t i = 0; i < n; ++i) {
      size_t idx = static_cast<size_t>(rng() % n);
      d += a[idx] - b[idx];
    }
    d /= static_cast<double>(n);
    if (d * observed <= 0.0) ++flips;
  }
  return static_cast<double>(flips) / resamples;
}

// ---------------------------------------------------------------------------
// Gate traces

// Per generated token: gate activations averaged over dimensions and layers.
struct GateTraceSummary {
  std::vector<double> alpha;  // one scalar per decoder input position
  std::vector<double> beta;
  double mean_alpha = 0.0;
  double mean_beta = 0.0;
};

inline GateTraceSummary summarize_gate_trace(const GateTrace& trace) {
  GateTraceSummary s;
  if (trace.alpha.empty() && trace.beta.empty()) return s;
  auto reduce = [](const std::vector<Mat>& per_layer) {
    std::vector<double> out;
    if (per_layer.empty()) return out;
    const Eigen::Index len = per_layer.front().rows();
    out.assign(static_cast<size_t>(len), 0.0);
    for (const auto& m : per_layer)
      for (Eigen::Index t = 0; t < len; ++t)
        out[static_cast<size_t>(t)] += m.row(t).mean();
    for (auto& v : out) v /= static_cast<double>(per_layer.size());
    return out;
  };
  s.alpha = reduce(trace.alpha);
  s.beta = reduce(trace.beta);
  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double t = 0.0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  s.mean_alpha = mean(s.alpha);
  s.mean_beta = mean(s.beta);
  return s;
}

// Decodes a summary with gate recording; trace rows align with the decoder
// input positions of the generated sequence.
inline GateTraceSummary trace_gates(const Entity& entity, const Model& model,
                                    const DecodeConfig& cfg,
                                    SummaryResult* summary_out = nullptr) {
  std::vector<std::vector<int>> sources;
  for (const auto& r : entity.reviews) sources.push_back(r.tokens);
  ModelScorer scorer(model, sources, entity.images, entity.table);
  auto res = beam_search(std::cref(scorer), cfg);
  if (summary_out) {
    summary_out->tokens = res.tokens;
    summary_out->pruned_fallback = res.pruned_fallback;
    summary_out->text = model.vocab.decode(res.tokens);
  }
  std::vector<int> inputs = res.tokens;
  if (inputs.size() > 1 && inputs.back() == Vocab::kEos) inputs.pop_back();
  GateTrace trace = scorer.trace_sequence(inputs);
  return summarize_gate_trace(trace);
}

inline void export_gate_csv(const std::string& path,
                            const std::vector<std::string>& token_words,
                            const GateTraceSummary& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "position,token,alpha,beta\n";
  for (size_t i = 0; i < token_words.size(); ++i) {
    double a = i < s.alpha.size() ? s.alpha[i] : 0.0;
    double b = i < s.beta.size() ? s.beta[i] : 0.0;
    out << i << "," << token_words[i] << "," << a << "," << b << "\n";
  }
}

// Two-row heatmap (alpha above beta), one cell per token.
inline void export_gate_svg(const std::string& path,
                            const std::vector<std::string>& token_words,
                            const GateTraceSummary& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  const int cell = 36, rows = 2, label_h = 60;
  const int w = cell * static_cast<int>(token_words.size());
  const int h = cell * rows + label_h;
  double vmax = 1e-9;
  for (double v : s.alpha) vmax = std::max(vmax, v);
  for (double v : s.beta) vmax = std::max(vmax, v);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  auto cell_color = [&](double v) {
    int shade = 255 - static_cast<int>(std::min(1.0, v / vmax) * 200.0);
    std::ostringstream os;
    os << "rgb(" << shade << "," << shade << ",255)";
    return os.str();
  };
  for (size_t i = 0; i < token_words.size(); ++i) {
    double a = i < s.alpha.size() ? s.alpha[i] : 0.0;
    double b = i < s.beta.size() ? s.beta[i] : 0.0;
    out << "<rect x=\"" << i * cell << "\" y=\"0\" width=\"" << cell
        << "\" height=\"" << cell << "\" fill=\"" << cell_color(a) << "\"/>\n";
    out << "<rect x=\"" << i * cell << "\" y=\"" << cell << "\" width=\""
        << cell << "\" height=\"" << cell << "\" fill=\"" << cell_color(b)
        << "\"/>\n";
    out << "<text x=\"" << i * cell + 4 << "\" y=\"" << cell * rows + 16
        << "\" font-size=\"9\" transform=\"rotate(45 " << i * cell + 4 << ","
        << cell * rows + 16 << ")\">" << token_words[i] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace msum

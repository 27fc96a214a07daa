#pragma once

// Pre-norm transformer encoder-decoder. The decoder's cross-attention
// sublayer attends to every source block separately, averages the per-head
// results across blocks, and fuses modalities through elementwise gates:
//
//   ma_fused = ma_text + alpha (.) ma_img + beta (.) ma_table
//   alpha = ReLU(tanh([ma_text; ma_img] W_alpha)), beta analogous.
//
// Decoder input rows are token + sd * deviation + positional embeddings.

#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "msum/tensor.hpp"
#include "msum/vocab.hpp"

namespace msum {

struct ModelConfig {
  int e_d = 64;
  int e_t = 256;  // table encoder internal width
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int max_len = 128;  // l_D
  int vocab = 1000;
  int ffn_mult = 4;
  double gate_init_std = 1e-3;

  void validate() const {
    if (e_d % heads != 0)
      throw std::invalid_argument("e_d must be divisible by heads");
    if (e_d <= 0 || e_t <= 0 || enc_layers <= 0 || dec_layers <= 0 ||
        heads <= 0 || max_len <= 0 || vocab < 6)
      throw std::invalid_argument("bad model configuration");
  }
};

struct LayerNormParams {
  NodePtr gain, bias;
};

struct AttnParams {
  NodePtr wq, wk, wv, wo;  // (e_D x e_D)
  NodePtr bq, bk, bv, bo;  // (1 x e_D)
};

struct FfnParams {
  NodePtr w1, b1, w2, b2;
};

struct EncLayerParams {
  LayerNormParams ln_attn, ln_ffn;
  AttnParams attn;
  FfnParams ffn;
};

struct DecLayerParams {
  LayerNormParams ln_self, ln_cross, ln_ffn;
  AttnParams self_attn, cross_attn;
  NodePtr w_alpha, w_beta;  // (2 e_D x e_D)
  FfnParams ffn;
};

struct TransformerParams {
  ModelConfig cfg;
  NodePtr token_emb;  // (vocab x e_D); also the tied output projection
  NodePtr pos_emb;    // (max_len x e_D)
  NodePtr dev_emb;    // (1 x e_D)
  std::vector<EncLayerParams> enc;
  LayerNormParams enc_final;
  std::vector<DecLayerParams> dec;
  LayerNormParams dec_final;

  static TransformerParams init(const ModelConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    auto randn = [&](Eigen::Index r, Eigen::Index c, double sd) {
      std::normal_distribution<double> d(0.0, sd);
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
      return m;
    };
    const int e = cfg.e_d;
    auto weight = [&](Eigen::Index r, Eigen::Index c) {
      return make_param(randn(r, c, 0.02));
    };
    auto zeros = [&](Eigen::Index r, Eigen::Index c) {
      return make_param(Mat::Zero(r, c));
    };
    auto ones_row = [&] { return make_param(Mat::Ones(1, e)); };
    auto ln = [&] { return LayerNormParams{ones_row(), zeros(1, e)}; };
    auto attn = [&] {
      return AttnParams{weight(e, e), weight(e, e), weight(e, e), weight(e, e),
                        zeros(1, e),  zeros(1, e),  zeros(1, e),  zeros(1, e)};
    };
    auto ffn = [&] {
      return FfnParams{weight(e, cfg.ffn_mult * e), zeros(1, cfg.ffn_mult * e),
                       weight(cfg.ffn_mult * e, e), zeros(1, e)};
    };

    TransformerParams p;
    p.cfg = cfg;
    p.token_emb = weight(cfg.vocab, e);
    p.pos_emb = weight(cfg.max_len, e);
    p.dev_emb = weight(1, e);
    for (int i = 0; i < cfg.enc_layers; ++i)
      p.enc.push_back({ln(), ln(), attn(), ffn()});
    p.enc_final = ln();
    for (int i = 0; i < cfg.dec_layers; ++i)
      p.dec.push_back({ln(), ln(), ln(), attn(), attn(),
                       make_param(randn(2 * e, e, cfg.gate_init_std)),
                       make_param(randn(2 * e, e, cfg.gate_init_std)), ffn()});
    p.dec_final = ln();
    return p;
  }

  std::vector<std::pair<std::string, NodePtr>> named_params() const {
    std::vector<std::pair<std::string, NodePtr>> out;
    auto add = [&](const std::string& n, const NodePtr& p) {
      out.emplace_back(n, p);
    };
    auto add_ln = [&](const std::string& b, const LayerNormParams& l) {
      add(b + ".gain", l.gain);
      add(b + ".bias", l.bias);
    };
    auto add_attn = [&](const std::string& b, const AttnParams& a) {
      add(b + ".wq", a.wq); add(b + ".wk", a.wk);
      add(b + ".wv", a.wv); add(b + ".wo", a.wo);
      add(b + ".bq", a.bq); add(b + ".bk", a.bk);
      add(b + ".bv", a.bv); add(b + ".bo", a.bo);
    };
    auto add_ffn = [&](const std::string& b, const FfnParams& f) {
      add(b + ".w1", f.w1); add(b + ".b1", f.b1);
      add(b + ".w2", f.w2); add(b + ".b2", f.b2);
    };
    add("emb.token", token_emb);
    add("emb.pos", pos_emb);
    add("emb.dev", dev_emb);
    for (size_t i = 0; i < enc.size(); ++i) {
      std::string b = "enc." + std::to_string(i);
      add_ln(b + ".ln_attn", enc[i].ln_attn);
      add_attn(b + ".attn", enc[i].attn);
      add_ln(b + ".ln_ffn", enc[i].ln_ffn);
      add_ffn(b + ".ffn", enc[i].ffn);
    }
    add_ln("enc.final", enc_final);
    for (size_t i = 0; i < dec.size(); ++i) {
      std::string b = "dec." + std::to_string(i);
      add_ln(b + ".ln_self", dec[i].ln_self);
      add_attn(b + ".self_attn", dec[i].self_attn);
      add_ln(b + ".ln_cross", dec[i].ln_cross);
      add_attn(b + ".cross_attn", dec[i].cross_attn);
      add(b + ".w_alpha", dec[i].w_alpha);
      add(b + ".w_beta", dec[i].w_beta);
      add_ln(b + ".ln_ffn", dec[i].ln_ffn);
      add_ffn(b + ".ffn", dec[i].ffn);
    }
    add_ln("dec.final", dec_final);
    return out;
  }

  // Everything except the multimodal gates; the text-only stages train these.
  std::vector<std::pair<std::string, NodePtr>> text_params() const {
    std::vector<std::pair<std::string, NodePtr>> out;
    for (auto& [n, p] : named_params())
      if (n.find("w_alpha") == std::string::npos &&
          n.find("w_beta") == std::string::npos)
        out.emplace_back(n, p);
    return out;
  }

  std::vector<std::pair<std::string, NodePtr>> gate_params() const {
    std::vector<std::pair<std::string, NodePtr>> out;
    for (size_t i = 0; i < dec.size(); ++i) {
      out.emplace_back("dec." + std::to_string(i) + ".w_alpha", dec[i].w_alpha);
      out.emplace_back("dec." + std::to_string(i) + ".w_beta", dec[i].w_beta);
    }
    return out;
  }
};

// Encoded representation blocks for one training/inference instance.
struct EncodedModalities {
  std::vector<NodePtr> text;   // N-1 blocks, (len x e_D) each
  std::vector<NodePtr> image;  // M blocks
  NodePtr table;               // single block or nullptr

  bool any() const { return !text.empty() || !image.empty() || table; }
};

// Per-layer gate activations captured during a traced forward pass.
struct GateTrace {
  std::vector<Mat> alpha;  // (len x e_D) per decoder layer; empty if unused
  std::vector<Mat> beta;
};

namespace detail {

inline Mat causal_mask(Eigen::Index len) {
  Mat m = Mat::Zero(len, len);
  const double ninf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < len; ++i)
    for (Eigen::Index j = i + 1; j < len; ++j) m(i, j) = ninf;
  return m;
}

// Multi-head attention of q_in against a set of key/value blocks. Per head,
// attention is computed against each block separately and the per-head
// results are averaged across blocks before the output projection.
inline NodePtr attend_blocks(Tape& tape, const NodePtr& q_in,
                             const std::vector<NodePtr>& blocks,
                             const AttnParams& p, int heads,
                             const Mat* mask = nullptr) {
  if (blocks.empty())
    throw std::invalid_argument("attend_blocks: no key/value blocks");
  const Eigen::Index e = p.wq->value.cols();
  const Eigen::Index dh = e / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto q = tape.add_rowvec(tape.matmul(q_in, p.wq), p.bq);
  std::vector<NodePtr> ks, vs;
  for (const auto& b : blocks) {
    ks.push_back(tape.add_rowvec(tape.matmul(b, p.wk), p.bk));
    vs.push_back(tape.add_rowvec(tape.matmul(b, p.wv), p.bv));
  }
  std::vector<NodePtr> head_outs;
  for (int h = 0; h < heads; ++h) {
    auto qh = tape.cols(q, h * dh, dh);
    std::vector<NodePtr> per_block;
    for (size_t b = 0; b < blocks.size(); ++b) {
      auto kh = tape.cols(ks[b], h * dh, dh);
      auto vh = tape.cols(vs[b], h * dh, dh);
      auto scores = tape.scale(tape.matmul_nt(qh, kh), scale);
      auto att = tape.softmax_rows(scores, mask);
      per_block.push_back(tape.matmul(att, vh));
    }
    head_outs.push_back(per_block.size() == 1 ? per_block[0]
                                              : tape.mean_nodes(per_block));
  }
  NodePtr cat = head_outs[0];
  for (size_t h = 1; h < head_outs.size(); ++h)
    cat = tape.concat_cols(cat, head_outs[h]);
  return tape.add_rowvec(tape.matmul(cat, p.wo), p.bo);
}

inline NodePtr ffn_forward(Tape& tape, const NodePtr& x, const FfnParams& f) {
  auto h = tape.gelu(tape.add_rowvec(tape.matmul(x, f.w1), f.b1));
  return tape.add_rowvec(tape.matmul(h, f.w2), f.b2);
}

}  // namespace detail

// Decoder input rows: token + sd * deviation + positional embeddings.
inline NodePtr embed_decoder_inputs(Tape& tape, const std::vector<int>& tokens,
                                    double sd, const TransformerParams& p) {
  if (static_cast<int>(tokens.size()) > p.cfg.max_len)
    throw std::invalid_argument("decoder input exceeds max length");
  auto x = tape.gather_rows(p.token_emb, tokens);
  std::vector<int> positions(tokens.size());
  for (size_t i = 0; i < positions.size(); ++i)
    positions[i] = static_cast<int>(i);
  x = tape.add(x, tape.gather_rows(p.pos_emb, positions));
  if (sd != 0.0) x = tape.add_rowvec(x, tape.scale(p.dev_emb, sd));
  return x;
}

// One source sequence through the encoder stack: (len x e_D).
inline NodePtr encode_sequence(Tape& tape, const std::vector<int>& tokens,
                               const TransformerParams& p) {
  if (tokens.empty()) throw std::invalid_argument("encode_sequence: empty input");
  if (static_cast<int>(tokens.size()) > p.cfg.max_len)
    throw std::invalid_argument("encoder input exceeds max length");
  auto x = tape.gather_rows(p.token_emb, tokens);
  std::vector<int> positions(tokens.size());
  for (size_t i = 0; i < positions.size(); ++i)
    positions[i] = static_cast<int>(i);
  x = tape.add(x, tape.gather_rows(p.pos_emb, positions));
  for (const auto& layer : p.enc) {
    auto normed = tape.layer_norm(x, layer.ln_attn.gain, layer.ln_attn.bias);
    auto a =
        detail::attend_blocks(tape, normed, {normed}, layer.attn, p.cfg.heads);
    x = tape.add(x, a);
    auto f = detail::ffn_forward(
        tape, tape.layer_norm(x, layer.ln_ffn.gain, layer.ln_ffn.bias),
        layer.ffn);
    x = tape.add(x, f);
  }
  return tape.layer_norm(x, p.enc_final.gain, p.enc_final.bias);
}

// Sources encoded independently; block i depends only on source i.
inline std::vector<NodePtr> encode_text(
    Tape& tape, const std::vector<std::vector<int>>& sources,
    const TransformerParams& p) {
  if (sources.empty()) throw std::invalid_argument("encode_text: no sources");
  std::vector<NodePtr> out;
  out.reserve(sources.size());
  for (const auto& s : sources) out.push_back(encode_sequence(tape, s, p));
  return out;
}

// Gated fusion of per-modality attention results. Absent modalities pass
// nullptr; their gate is the zero vector and their term vanishes.
inline NodePtr fuse_modalities(Tape& tape, const NodePtr& ma_text,
                               const NodePtr& ma_img, const NodePtr& ma_table,
                               const NodePtr& w_alpha, const NodePtr& w_beta,
                               GateTrace* trace = nullptr) {
  if (!ma_text) throw std::invalid_argument("fuse_modalities: ma_text required");
  const Eigen::Index len = ma_text->value.rows();
  const Eigen::Index e = ma_text->value.cols();
  NodePtr fused = ma_text;
  if (ma_img) {
    auto alpha = tape.relu(tape.tanh_(
        tape.matmul(tape.concat_cols(ma_text, ma_img), w_alpha)));
    if (trace) trace->alpha.push_back(alpha->value);
    fused = tape.add(fused, tape.cmul(alpha, ma_img));
  } else if (trace) {
    trace->alpha.push_back(Mat::Zero(len, e));
  }
  if (ma_table) {
    auto beta = tape.relu(tape.tanh_(
        tape.matmul(tape.concat_cols(ma_text, ma_table), w_beta)));
    if (trace) trace->beta.push_back(beta->value);
    fused = tape.add(fused, tape.cmul(beta, ma_table));
  } else if (trace) {
    trace->beta.push_back(Mat::Zero(len, e));
  }
  return fused;
}

// Cross-attention with gated multimodal fusion for one decoder layer.
inline NodePtr fuse_modalities_attend(Tape& tape, const NodePtr& q_in,
                                      const EncodedModalities& mods,
                                      const DecLayerParams& layer, int heads,
                                      GateTrace* trace = nullptr) {
  NodePtr ma_text, ma_img, ma_table;
  if (!mods.text.empty())
    ma_text = detail::attend_blocks(tape, q_in, mods.text, layer.cross_attn, heads);
  if (!mods.image.empty())
    ma_img = detail::attend_blocks(tape, q_in, mods.image, layer.cross_attn, heads);
  if (mods.table)
    ma_table =
        detail::attend_blocks(tape, q_in, {mods.table}, layer.cross_attn, heads);

  if (!ma_text) {
    // Pivot-decoder setting: exactly one non-text modality, no fusion.
    if (ma_img && ma_table)
      throw std::invalid_argument(
          "fusion without text supports a single modality");
    if (trace) {
      Eigen::Index len = q_in->value.rows(), e = q_in->value.cols();
      trace->alpha.push_back(Mat::Zero(len, e));
      trace->beta.push_back(Mat::Zero(len, e));
    }
    if (ma_img) return ma_img;
    if (ma_table) return ma_table;
    throw std::invalid_argument("no modality present in fused attention");
  }
  return fuse_modalities(tape, ma_text, ma_img, ma_table, layer.w_alpha,
                         layer.w_beta, trace);
}

// Per-position log-probabilities over the vocabulary for the next token.
inline NodePtr forward_log_probs(Tape& tape, const EncodedModalities& mods,
                                 const std::vector<int>& decoder_tokens,
                                 double sd, const TransformerParams& p,
                                 GateTrace* trace = nullptr) {
  if (!mods.any())
    throw std::invalid_argument("forward_log_probs: no modality present");
  if (decoder_tokens.empty())
    throw std::invalid_argument("forward_log_probs: empty decoder input");
  auto x = embed_decoder_inputs(tape, decoder_tokens, sd, p);
  Mat mask = detail::causal_mask(x->value.rows());
  for (const auto& layer : p.dec) {
    auto normed = tape.layer_norm(x, layer.ln_self.gain, layer.ln_self.bias);
    auto a = detail::attend_blocks(tape, normed, {normed}, layer.self_attn,
                                   p.cfg.heads, &mask);
    x = tape.add(x, a);
    auto c = fuse_modalities_attend(
        tape, tape.layer_norm(x, layer.ln_cross.gain, layer.ln_cross.bias),
        mods, layer, p.cfg.heads, trace);
    x = tape.add(x, c);
    auto f = detail::ffn_forward(
        tape, tape.layer_norm(x, layer.ln_ffn.gain, layer.ln_ffn.bias),
        layer.ffn);
    x = tape.add(x, f);
  }
  x = tape.layer_norm(x, p.dec_final.gain, p.dec_final.bias);
  return tape.log_softmax_rows(tape.matmul_nt(x, p.token_emb));
}

}  // namespace msum

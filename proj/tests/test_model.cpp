#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "msum/model.hpp"

using namespace msum;
using msum::test::randn;

namespace {

ModelConfig micro_cfg(int e_d = 2, int heads = 1, int vocab = 7) {
  ModelConfig cfg;
  cfg.e_d = e_d;
  cfg.e_t = e_d;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.heads = heads;
  cfg.max_len = 16;
  cfg.vocab = vocab;
  cfg.ffn_mult = 2;
  return cfg;
}

// ---------------------------------------------------------------------------
// Straight-line reimplementation of the micro-config forward pass (1 layer,
// 1 head) using plain Eigen only. Kept independent of the tape machinery.

Mat naive_layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    out.row(i) = (((x.row(i).array() - mu) / std::sqrt(var + 1e-5)) *
                      g.row(0).array() +
                  b.row(0).array())
                     .matrix();
  }
  return out;
}

Mat naive_softmax(const Mat& z) {
  Mat s(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::ArrayXd e = (z.row(i).array() - z.row(i).maxCoeff()).exp();
    s.row(i) = (e / e.sum()).matrix();
  }
  return s;
}

Mat naive_attend(const Mat& q_in, const Mat& kv_in, const AttnParams& p,
                 bool causal) {
  Mat q = q_in * p.wq->value;
  q.rowwise() += p.bq->value.row(0);
  Mat k = kv_in * p.wk->value;
  k.rowwise() += p.bk->value.row(0);
  Mat v = kv_in * p.wv->value;
  v.rowwise() += p.bv->value.row(0);
  Mat scores = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  if (causal)
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
      for (Eigen::Index j = i + 1; j < scores.cols(); ++j)
        scores(i, j) = -std::numeric_limits<double>::infinity();
  Mat out = naive_softmax(scores) * v;
  Mat proj = out * p.wo->value;
  proj.rowwise() += p.bo->value.row(0);
  return proj;
}

Mat naive_gelu(const Mat& x) {
  return x.unaryExpr([](double v) {
    return v * 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
  });
}

Mat naive_ffn(const Mat& x, const FfnParams& f) {
  Mat h = x * f.w1->value;
  h.rowwise() += f.b1->value.row(0);
  h = naive_gelu(h);
  Mat out = h * f.w2->value;
  out.rowwise() += f.b2->value.row(0);
  return out;
}

Mat naive_encode(const std::vector<int>& tokens, const TransformerParams& p) {
  Mat x(static_cast<Eigen::Index>(tokens.size()), p.cfg.e_d);
  for (size_t i = 0; i < tokens.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) =
        p.token_emb->value.row(tokens[i]) +
        p.pos_emb->value.row(static_cast<Eigen::Index>(i));
  const auto& l = p.enc[0];
  Mat n1 = naive_layer_norm(x, l.ln_attn.gain->value, l.ln_attn.bias->value);
  x += naive_attend(n1, n1, l.attn, false);
  x += naive_ffn(naive_layer_norm(x, l.ln_ffn.gain->value, l.ln_ffn.bias->value),
                 l.ffn);
  return naive_layer_norm(x, p.enc_final.gain->value, p.enc_final.bias->value);
}

Mat naive_forward_log_probs(const std::vector<std::vector<int>>& sources,
                            const std::vector<int>& dec_tokens, double sd,
                            const TransformerParams& p) {
  std::vector<Mat> blocks;
  for (const auto& s : sources) blocks.push_back(naive_encode(s, p));

  Mat x(static_cast<Eigen::Index>(dec_tokens.size()), p.cfg.e_d);
  for (size_t i = 0; i < dec_tokens.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) =
        p.token_emb->value.row(dec_tokens[i]) +
        sd * p.dev_emb->value.row(0) +
        p.pos_emb->value.row(static_cast<Eigen::Index>(i));

  const auto& l = p.dec[0];
  Mat n1 = naive_layer_norm(x, l.ln_self.gain->value, l.ln_self.bias->value);
  x += naive_attend(n1, n1, l.self_attn, true);
  Mat n2 = naive_layer_norm(x, l.ln_cross.gain->value, l.ln_cross.bias->value);
  Mat ma = Mat::Zero(x.rows(), x.cols());
  for (const auto& b : blocks) ma += naive_attend(n2, b, l.cross_attn, false);
  ma /= static_cast<double>(blocks.size());
  x += ma;
  x += naive_ffn(naive_layer_norm(x, l.ln_ffn.gain->value, l.ln_ffn.bias->value),
                 l.ffn);
  x = naive_layer_norm(x, p.dec_final.gain->value, p.dec_final.bias->value);
  Mat logits = x * p.token_emb->value.transpose();
  Mat logp(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    logp.row(i) = (logits.row(i).array() - lse).matrix();
  }
  return logp;
}

}  // namespace

TEST_CASE("decoder input embeddings") {
  std::mt19937_64 rng(1);
  auto p = TransformerParams::init(micro_cfg(), rng);
  std::vector<int> tokens = {1, 5, 6};

  SECTION("sd = 0 is token + positional only") {
    Tape tape;
    auto x = embed_decoder_inputs(tape, tokens, 0.0, p);
    for (size_t i = 0; i < tokens.size(); ++i) {
      Mat expect = p.token_emb->value.row(tokens[i]) +
                   p.pos_emb->value.row(static_cast<Eigen::Index>(i));
      REQUIRE((x->value.row(static_cast<Eigen::Index>(i)) - expect).norm() ==
              0.0);
    }
  }
  SECTION("linearity in sd exposes the deviation embedding") {
    Tape tape;
    auto x1 = embed_decoder_inputs(tape, tokens, 1.0, p);
    auto x2 = embed_decoder_inputs(tape, tokens, 2.0, p);
    Mat diff = x2->value - x1->value;
    for (Eigen::Index i = 0; i < diff.rows(); ++i)
      REQUIRE((diff.row(i) - p.dev_emb->value.row(0)).norm() < 1e-12);
  }
  SECTION("hand-set 2-vector sum") {
    auto q = TransformerParams::init(micro_cfg(), rng);
    q.token_emb->value.row(2) << 1.0, 2.0;
    q.pos_emb->value.row(0) << 0.25, -0.25;
    q.dev_emb->value << 2.0, -1.0;
    Tape tape;
    auto x = embed_decoder_inputs(tape, {2}, -1.5, q);
    REQUIRE(x->value(0, 0) == Catch::Approx(1.0 + 0.25 - 3.0).margin(1e-12));
    REQUIRE(x->value(0, 1) == Catch::Approx(2.0 - 0.25 + 1.5).margin(1e-12));
  }
  SECTION("length overflow errors") {
    std::vector<int> toolong(17, 2);
    Tape tape;
    REQUIRE_THROWS_AS(embed_decoder_inputs(tape, toolong, 0.0, p),
                      std::invalid_argument);
  }
}

TEST_CASE("encode_text blocks are independent per source") {
  std::mt19937_64 rng(2);
  auto p = TransformerParams::init(micro_cfg(4, 2), rng);
  std::vector<std::vector<int>> sources = {{1, 5, 2}, {1, 6, 6, 2}};
  Tape tape;
  auto blocks = encode_text(tape, sources, p);
  REQUIRE(blocks.size() == 2);
  REQUIRE(blocks[0]->value.rows() == 3);
  REQUIRE(blocks[1]->value.rows() == 4);

  auto swapped = encode_text(tape, {sources[1], sources[0]}, p);
  REQUIRE(blocks[0]->value == swapped[1]->value);
  REQUIRE(blocks[1]->value == swapped[0]->value);
  REQUIRE_THROWS_AS(encode_text(tape, {}, p), std::invalid_argument);
}

TEST_CASE("multi-source attention averaging") {
  std::mt19937_64 rng(3);
  const int e = 2;
  AttnParams p{make_param(randn(e, e, rng)), make_param(randn(e, e, rng)),
               make_param(randn(e, e, rng)), make_param(randn(e, e, rng)),
               make_param(Mat::Zero(1, e)),  make_param(Mat::Zero(1, e)),
               make_param(Mat::Zero(1, e)),  make_param(Mat::Zero(1, e))};
  auto q = make_param(randn(3, e, rng));
  auto b1 = make_param(randn(4, e, rng));
  auto b2 = make_param(randn(5, e, rng));

  SECTION("one block equals standard attention; k copies equal one") {
    Tape tape;
    auto one = detail::attend_blocks(tape, q, {b1}, p, 1);
    auto three = detail::attend_blocks(tape, q, {b1, b1, b1}, p, 1);
    REQUIRE((one->value - three->value).norm() < 1e-12);
  }
  SECTION("two one-token blocks with scalar params follow the hand formula") {
    AttnParams s{make_param(Mat::Constant(1, 1, 0.7)),
                 make_param(Mat::Constant(1, 1, -0.4)),
                 make_param(Mat::Constant(1, 1, 1.3)),
                 make_param(Mat::Constant(1, 1, 2.0)),
                 make_param(Mat::Constant(1, 1, 0.1)),
                 make_param(Mat::Constant(1, 1, 0.2)),
                 make_param(Mat::Constant(1, 1, 0.3)),
                 make_param(Mat::Constant(1, 1, 0.4))};
    auto qq = make_param(Mat::Constant(1, 1, 0.9));
    auto c1 = make_param(Mat::Constant(1, 1, 1.5));
    auto c2 = make_param(Mat::Constant(1, 1, -2.5));
    Tape tape;
    auto out = detail::attend_blocks(tape, qq, {c1, c2}, s, 1);
    // Single-key softmax is 1, so each block contributes v = x*1.3 + 0.3.
    double v1 = 1.5 * 1.3 + 0.3, v2 = -2.5 * 1.3 + 0.3;
    double expect = ((v1 + v2) / 2.0) * 2.0 + 0.4;
    REQUIRE(out->value(0, 0) == Catch::Approx(expect).margin(1e-12));
  }
  SECTION("zero blocks errors") {
    Tape tape;
    REQUIRE_THROWS_AS(detail::attend_blocks(tape, q, {}, p, 1),
                      std::invalid_argument);
  }
}

TEST_CASE("fuse_modalities hand evaluation and gate range") {
  auto ma_text = make_param(Mat(1, 2));
  ma_text->value << 1.0, -1.0;
  auto ma_img = make_param(Mat(1, 2));
  ma_img->value << 2.0, 0.0;
  auto w_alpha = make_param(Mat::Zero(4, 2));
  // Pre-activation [1, -1, 2, 0] W = (0.5, -3).
  w_alpha->value(0, 0) = 0.5;
  w_alpha->value(1, 1) = 3.0;
  auto w_beta = make_param(Mat::Zero(4, 2));

  Tape tape;
  GateTrace trace;
  auto fused = fuse_modalities(tape, ma_text, ma_img, nullptr, w_alpha, w_beta,
                               &trace);
  double a0 = std::tanh(0.5);
  REQUIRE(fused->value(0, 0) == Catch::Approx(1.0 + a0 * 2.0).margin(1e-12));
  REQUIRE(fused->value(0, 1) == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(trace.alpha.size() == 1);
  REQUIRE(trace.alpha[0](0, 0) == Catch::Approx(a0).margin(1e-12));
  REQUIRE(trace.alpha[0](0, 1) == 0.0);
  REQUIRE(trace.beta.size() == 1);
  REQUIRE(trace.beta[0].isZero(0.0));

  SECTION("zero gate weights pass text through exactly") {
    Tape t2;
    auto f0 = fuse_modalities(t2, ma_text, ma_img, ma_img,
                              make_param(Mat::Zero(4, 2)),
                              make_param(Mat::Zero(4, 2)), nullptr);
    REQUIRE(f0->value == ma_text->value);
  }
  SECTION("gates stay in [0, 1)") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      Tape t2;
      GateTrace tr;
      auto mt = make_param(randn(3, 2, rng));
      auto mi = make_param(randn(3, 2, rng));
      auto w = make_param(randn(4, 2, rng));
      fuse_modalities(t2, mt, mi, nullptr, w, w, &tr);
      REQUIRE(tr.alpha[0].minCoeff() >= 0.0);
      REQUIRE(tr.alpha[0].maxCoeff() < 1.0);
    }
  }
}

TEST_CASE("forward_log_probs properties") {
  std::mt19937_64 rng(5);
  auto cfg = micro_cfg(4, 2, 9);
  auto p = TransformerParams::init(cfg, rng);
  std::vector<std::vector<int>> sources = {{1, 5, 2}, {1, 6, 7, 2}};
  std::vector<int> dec = {1, 5, 6, 7};

  SECTION("rows are normalized distributions") {
    Tape tape;
    EncodedModalities mods;
    mods.text = encode_text(tape, sources, p);
    auto logp = forward_log_probs(tape, mods, dec, 0.3, p);
    for (Eigen::Index i = 0; i < logp->value.rows(); ++i)
      REQUIRE(std::abs(std::log(logp->value.row(i).array().exp().sum())) <
              1e-6);
  }
  SECTION("causal masking: future edits leave earlier rows bit-identical") {
    Tape t1;
    EncodedModalities m1;
    m1.text = encode_text(t1, sources, p);
    auto a = forward_log_probs(t1, m1, dec, 0.0, p);
    std::vector<int> dec2 = dec;
    dec2[3] = 8;
    Tape t2;
    EncodedModalities m2;
    m2.text = encode_text(t2, sources, p);
    auto b = forward_log_probs(t2, m2, dec2, 0.0, p);
    for (Eigen::Index i = 0; i < 3; ++i)
      REQUIRE(a->value.row(i) == b->value.row(i));
  }
  SECTION("source-order invariance") {
    std::vector<std::vector<int>> more = {{1, 5, 2}, {1, 6, 7, 2}, {1, 7, 2}};
    Tape t1;
    EncodedModalities m1;
    m1.text = encode_text(t1, more, p);
    auto a = forward_log_probs(t1, m1, dec, 0.0, p);
    Tape t2;
    EncodedModalities m2;
    m2.text = encode_text(t2, {more[2], more[0], more[1]}, p);
    auto b = forward_log_probs(t2, m2, dec, 0.0, p);
    REQUIRE((a->value - b->value).cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("no modality errors") {
    Tape tape;
    EncodedModalities mods;
    REQUIRE_THROWS_AS(forward_log_probs(tape, mods, dec, 0.0, p),
                      std::invalid_argument);
  }
}

TEST_CASE("micro-config forward matches the straight-line oracle") {
  std::mt19937_64 rng(6);
  auto cfg = micro_cfg(2, 1, 6);
  auto p = TransformerParams::init(cfg, rng);
  std::vector<std::vector<int>> sources = {{1, 3, 2}, {1, 4, 4, 2}};
  std::vector<int> dec = {1, 3, 4};

  Tape tape;
  EncodedModalities mods;
  mods.text = encode_text(tape, sources, p);
  auto logp = forward_log_probs(tape, mods, dec, -1.5, p);
  Mat naive = naive_forward_log_probs(sources, dec, -1.5, p);
  REQUIRE((logp->value - naive).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("gate-zero equivalence of multimodal and text-only forward") {
  std::mt19937_64 rng(7);
  auto cfg = micro_cfg(4, 2, 9);
  Vocab v;
  while (v.size() < 9) v.add_word("w" + std::to_string(v.size()));
  ImageConfig icfg;
  icfg.channels = 1;
  icfg.height = 4;
  icfg.width = 4;
  icfg.block_channels = {2, 2, 2, 2};
  icfg.e_d = cfg.e_d;
  auto model = Model::init(cfg, icfg, v, {"c1"}, 11);
  for (auto& [n, gp] : model.text.gate_params()) gp->value.setZero();

  RasterImage img;
  img.channels = 1;
  img.height = 4;
  img.width = 4;
  img.pixels.assign(16, 0.5f);
  TableData table;
  TableField f{"wifi", {}};
  f.value.kind = FieldKind::Binary;
  f.value.flag = true;
  table.fields = {f};

  std::vector<std::vector<int>> sources = {{1, 5, 2}, {1, 6, 7, 2}};
  std::vector<int> dec = {1, 5, 6};

  Tape t1;
  auto multi = forward_log_probs(
      t1, model.encode(t1, sources, {img}, table), dec, 0.5, model.text);
  Tape t2;
  auto text_only = forward_log_probs(
      t2, model.encode(t2, sources, {}, TableData{}), dec, 0.5, model.text);
  REQUIRE(multi->value == text_only->value);
}

TEST_CASE("full-model gradient check on a micro configuration") {
  std::mt19937_64 rng(8);
  auto cfg = micro_cfg(2, 1, 7);
  Vocab v;
  while (v.size() < 7) v.add_word("w" + std::to_string(v.size()));
  ImageConfig icfg;
  icfg.channels = 1;
  icfg.height = 2;
  icfg.width = 2;
  icfg.block_channels = {1, 1, 1, 1};
  icfg.frozen_prefix = 0;
  icfg.e_d = cfg.e_d;
  auto model = Model::init(cfg, icfg, v, {"c1"}, 13);

  RasterImage img;
  img.channels = 1;
  img.height = 2;
  img.width = 2;
  img.pixels = {0.1f, 0.7f, 0.4f, 0.9f};
  TableData table;
  TableField f{"wifi", {}};
  f.value.kind = FieldKind::Categorical;
  f.value.categories = {"c1"};
  table.fields = {f};

  std::vector<std::vector<int>> sources = {{1, 5, 2}, {1, 6, 2}};
  std::vector<int> target = {1, 5, 6, 2};

  auto build = [&](Tape& t) {
    auto mods = model.encode(t, sources, {img}, table);
    return model.sequence_loss(t, mods, target, -0.5, 0.1);
  };
  NamedParams params = model.text.named_params();
  for (auto& pr : model.image.trainable_params()) params.push_back(pr);
  for (auto& pr : model.table.named_params()) params.push_back(pr);
  REQUIRE(test::fd_gradient_check(build, params) < 1e-4);
}

TEST_CASE("checkpoint round trip is byte-stable and lossless") {
  std::mt19937_64 rng(9);
  auto cfg = micro_cfg(4, 2, 10);
  Vocab v;
  while (v.size() < 10) v.add_word("w" + std::to_string(v.size()));
  ImageConfig icfg;
  icfg.channels = 1;
  icfg.height = 4;
  icfg.width = 4;
  icfg.block_channels = {2, 2, 2, 2};
  icfg.e_d = cfg.e_d;
  auto model = Model::init(cfg, icfg, v, {"c1", "c2"}, 21);

  std::string p1 = "/tmp/msum_ckpt_a.bin", p2 = "/tmp/msum_ckpt_b.bin";
  save_checkpoint(model, p1);
  auto loaded = load_checkpoint(p1);
  auto orig = model.named_params();
  auto got = loaded.named_params();
  REQUIRE(orig.size() == got.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i].first == got[i].first);
    REQUIRE(orig[i].second->value == got[i].second->value);
  }
  REQUIRE(loaded.vocab.size() == model.vocab.size());
  REQUIRE(loaded.table.cat_ids == model.table.cat_ids);

  save_checkpoint(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  REQUIRE(s1.str() == s2.str());
}

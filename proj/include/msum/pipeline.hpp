#pragma once

// The four training stages: denoising pretraining of the text
// encoder-decoder, leave-one-out text pretraining, pivot-decoder pretraining
// of the non-text encoders, and end-to-end multimodal training.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "msum/corpus.hpp"
#include "msum/model.hpp"
#include "msum/optimizer.hpp"

namespace msum {

struct StageConfig {
  int batch = 16;
  int epochs = 5;
  double warmup = 0.5;  // epochs of linear warmup
  double lr = 5e-5;
  double clip = 0.0;  // max global gradient norm; <= 0 disables
  double label_smoothing = 0.1;
  double weight_decay = 0.1;
  uint64_t seed = 17;
};

inline StageConfig default_stage_config(int stage) {
  switch (stage) {
    case 0: return {16, 5, 0.5, 1e-4, 0.0, 0.1, 0.1, 17};
    case 1: return {16, 5, 0.5, 5e-5, 0.0, 0.1, 0.1, 17};
    case 2: return {32, 20, 1.0, 1e-4, 1.0, 0.1, 0.1, 17};
    case 3: return {8, 5, 0.25, 1e-5, 1.0, 0.1, 0.1, 17};
    default: throw std::invalid_argument("stage must be 0..3");
  }
}

class MetricsLogger {
 public:
  explicit MetricsLogger(const std::string& path) {
    if (!path.empty()) out_.open(path, std::ios::app);
  }
  void step(int stage, long step, double loss, double lr, double grad_norm) {
    if (!out_.is_open()) return;
    nlohmann::json j{{"stage", stage}, {"step", step}, {"loss", loss},
                     {"lr", lr},       {"grad_norm", grad_norm}};
    out_ << j.dump() << "\n";
    out_.flush();
  }
  void epoch(int stage, int epoch, double val_loss) {
    if (!out_.is_open()) return;
    nlohmann::json j{{"stage", stage}, {"epoch", epoch}, {"val_loss", val_loss}};
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct StageResult {
  double initial_val_loss = 0.0;
  std::vector<double> epoch_val_losses;
  std::vector<double> step_losses;

  double final_val_loss() const {
    return epoch_val_losses.empty() ? initial_val_loss
                                    : epoch_val_losses.back();
  }
};

// ---------------------------------------------------------------------------
// Text-infilling noise

// Masks ~rate of the tokens in contiguous spans (geometric length, mean
// span_mean), then collapses each masked run to one <mask> token and
// shuffles sentence order. bos/eos are never touched.
inline std::vector<int> noise_tokens(const std::vector<int>& tokens,
                                     double rate, double span_mean,
                                     std::mt19937_64& rng, int period_id) {
  if (tokens.size() <= 2 || rate <= 0.0) return tokens;
  const size_t n = tokens.size() - 2;  // interior
  std::vector<bool> masked(n, false);

  // Stochastic rounding keeps the expected coverage at exactly rate * n.
  double want = rate * static_cast<double>(n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  size_t target = static_cast<size_t>(want);
  if (u01(rng) < want - static_cast<double>(target)) ++target;
  target = std::min(target, n);

  std::geometric_distribution<int> geo(1.0 / span_mean);
  size_t covered = 0;
  int guard = 0;
  while (covered < target && guard++ < 10000) {
    size_t len = std::min<size_t>(1 + static_cast<size_t>(geo(rng)),
                                  target - covered);
    std::uniform_int_distribution<size_t> start_d(0, n - len);
    size_t start = start_d(rng);
    for (size_t i = start; i < start + len; ++i)
      if (!masked[i]) {
        masked[i] = true;
        ++covered;
      }
  }

  // Collapse masked runs to a single <mask>.
  std::vector<int> interior;
  for (size_t i = 0; i < n; ++i) {
    if (masked[i]) {
      if (interior.empty() || interior.back() != Vocab::kMask ||
          (i > 0 && !masked[i - 1]))
        interior.push_back(Vocab::kMask);
    } else {
      interior.push_back(tokens[i + 1]);
    }
  }

  // Sentence-order shuffling on '.' boundaries.
  if (period_id >= 0) {
    std::vector<std::vector<int>> sentences(1);
    for (int t : interior) {
      sentences.back().push_back(t);
      if (t == period_id) sentences.emplace_back();
    }
    if (sentences.back().empty()) sentences.pop_back();
    if (sentences.size() > 1) {
      std::shuffle(sentences.begin(), sentences.end(), rng);
      interior.clear();
      for (const auto& s : sentences)
        interior.insert(interior.end(), s.begin(), s.end());
    }
  }

  std::vector<int> out{tokens.front()};
  out.insert(out.end(), interior.begin(), interior.end());
  out.push_back(tokens.back());
  return out;
}

// ---------------------------------------------------------------------------
// Stage loops

namespace detail {

struct TrainItem {
  std::vector<std::vector<int>> sources;  // text blocks fed to the encoder
  const Entity* entity = nullptr;         // non-text inputs, when used
  std::vector<int> target;
  double sd = 0.0;
};

inline double run_batches(
    Model& model, AdamOptimizer& opt, const std::vector<TrainItem>& items,
    const StageConfig& cfg, int stage, bool use_images, bool use_table,
    long& global_step, long warmup_steps, long total_steps,
    MetricsLogger* logger, std::vector<double>* step_losses) {
  double epoch_loss = 0.0;
  long batches = 0;
  for (size_t at = 0; at < items.size(); at += static_cast<size_t>(cfg.batch)) {
    size_t end = std::min(items.size(), at + static_cast<size_t>(cfg.batch));
    Tape tape;
    std::vector<NodePtr> losses;
    for (size_t i = at; i < end; ++i) {
      const auto& it = items[i];
      EncodedModalities mods = model.encode(
          tape, it.sources,
          (use_images && it.entity) ? it.entity->images
                                    : std::vector<RasterImage>{},
          (use_table && it.entity) ? it.entity->table : TableData{});
      losses.push_back(model.sequence_loss(tape, mods, it.target, it.sd,
                                           cfg.label_smoothing));
    }
    auto batch_loss =
        losses.size() == 1 ? losses[0] : tape.mean_nodes(losses);
    opt.zero_grads();
    tape.backward(batch_loss);
    double grad_norm = clip_global_norm(opt.params(), cfg.clip);
    ++global_step;
    double lr = lr_at_step(global_step, warmup_steps, total_steps, cfg.lr);
    opt.step(lr);
    double lv = batch_loss->value(0, 0);
    epoch_loss += lv;
    ++batches;
    if (logger) logger->step(stage, global_step, lv, lr, grad_norm);
    if (step_losses) step_losses->push_back(lv);
  }
  return batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0;
}

// Validation tracks plain cross-entropy; label smoothing only shapes the
// training objective.
inline double eval_loss(const Model& model,
                        const std::vector<TrainItem>& items, bool use_images,
                        bool use_table) {
  if (items.empty()) return 0.0;
  double total = 0.0;
  for (const auto& it : items) {
    Tape tape;
    EncodedModalities mods = model.encode(
        tape, it.sources,
        (use_images && it.entity) ? it.entity->images
                                  : std::vector<RasterImage>{},
        (use_table && it.entity) ? it.entity->table : TableData{});
    total += model.sequence_loss(tape, mods, it.target, it.sd, 0.0)
                 ->value(0, 0);
  }
  return total / static_cast<double>(items.size());
}

inline std::vector<TrainItem> denoise_items(const std::vector<Entity>& entities,
                                            const Model& model, double rate,
                                            double span_mean,
                                            std::mt19937_64& rng) {
  int period = model.vocab.contains(".") ? model.vocab.id(".") : -1;
  std::vector<TrainItem> items;
  for (const auto& e : entities)
    for (const auto& r : e.reviews) {
      TrainItem it;
      it.sources = {noise_tokens(r.tokens, rate, span_mean, rng, period)};
      it.target = r.tokens;
      items.push_back(std::move(it));
    }
  return items;
}

inline std::vector<TrainItem> loo_items(const std::vector<Entity>& entities,
                                        bool with_entity) {
  std::vector<TrainItem> items;
  for (const auto& e : entities) {
    if (e.reviews.size() < 2) {
      std::cerr << "warning: entity '" << e.id
                << "' has fewer than 2 reviews; skipped\n";
      continue;
    }
    for (auto& p : build_leave_one_out_pairs(e)) {
      TrainItem it;
      for (const auto& s : p.sources) it.sources.push_back(s.tokens);
      it.target = p.target.tokens;
      it.sd = p.sd;
      if (with_entity) it.entity = &e;
      items.push_back(std::move(it));
    }
  }
  return items;
}

inline std::vector<TrainItem> flat_items(const std::vector<Entity>& entities) {
  std::vector<TrainItem> items;
  for (const auto& e : entities)
    for (auto& p : flatten_multireference(e)) {
      TrainItem it;
      it.entity = p.entity;
      it.target = p.target.tokens;
      it.sd = 0.0;  // undefined for non-text inputs; inference uses 0
      items.push_back(std::move(it));
    }
  return items;
}

inline long denoise_items_count(const std::vector<Entity>& entities) {
  long n = 0;
  for (const auto& e : entities) n += static_cast<long>(e.reviews.size());
  return n;
}

inline StageResult train_stage(Model& model, NamedParams trainable,
                               std::vector<TrainItem> train_items,
                               const std::vector<TrainItem>& val_items,
                               const StageConfig& cfg, int stage,
                               bool use_images, bool use_table,
                               MetricsLogger* logger) {
  if (train_items.empty())
    throw CorpusError("no training items for stage " + std::to_string(stage));
  AdamOptimizer opt(std::move(trainable), {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);

  long steps_per_epoch =
      (static_cast<long>(train_items.size()) + cfg.batch - 1) / cfg.batch;
  long total_steps = steps_per_epoch * cfg.epochs;
  long warmup_steps = static_cast<long>(cfg.warmup * steps_per_epoch);

  StageResult res;
  res.initial_val_loss = eval_loss(model, val_items, use_images, use_table);
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto items = train_items;
    std::shuffle(items.begin(), items.end(), rng);
    run_batches(model, opt, items, cfg, stage, use_images, use_table,
                global_step, warmup_steps, total_steps, logger,
                &res.step_losses);
    double vl = eval_loss(model, val_items, use_images, use_table);
    res.epoch_val_losses.push_back(vl);
    if (logger) logger->epoch(stage, epoch, vl);
  }
  return res;
}

}  // namespace detail

struct DenoiseSettings {
  double span_rate = 0.3;
  double span_mean = 3.0;
};

// Stage 0: reconstruct each review from its span-infilled, sentence-shuffled
// version. Trains the text encoder-decoder only.
inline StageResult stage0_denoise_pretrain(const std::vector<Entity>& train,
                                           const std::vector<Entity>& valid,
                                           Model& model, const StageConfig& cfg,
                                           MetricsLogger* logger = nullptr,
                                           DenoiseSettings noise = {}) {
  if (train.empty()) throw CorpusError("stage 0: empty corpus");
  std::mt19937_64 noise_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 val_rng(12345);
  auto val_items = detail::denoise_items(valid, model, noise.span_rate,
                                         noise.span_mean, val_rng);

  AdamOptimizer opt(model.text.text_params(),
                    {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  long steps_per_epoch =
      (detail::denoise_items_count(train) + cfg.batch - 1) / cfg.batch;
  long total_steps = steps_per_epoch * cfg.epochs;
  long warmup_steps = static_cast<long>(cfg.warmup * steps_per_epoch);

  StageResult res;
  res.initial_val_loss = detail::eval_loss(model, val_items, false, false);
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto items = detail::denoise_items(train, model, noise.span_rate,
                                       noise.span_mean, noise_rng);
    std::shuffle(items.begin(), items.end(), rng);
    detail::run_batches(model, opt, items, cfg, 0, false, false, global_step,
                        warmup_steps, total_steps, logger, &res.step_losses);
    double vl = detail::eval_loss(model, val_items, false, false);
    res.epoch_val_losses.push_back(vl);
    if (logger) logger->epoch(0, epoch, vl);
  }
  return res;
}

// Stage 1: leave-one-out text pretraining with rating-deviation embeddings.
inline StageResult stage1_text_pretrain(const std::vector<Entity>& train,
                                        const std::vector<Entity>& valid,
                                        Model& model, const StageConfig& cfg,
                                        MetricsLogger* logger = nullptr) {
  auto items = detail::loo_items(train, false);
  if (items.empty()) throw CorpusError("stage 1: no usable entities");
  auto val_items = detail::loo_items(valid, false);
  return detail::train_stage(model, model.text.text_params(), std::move(items),
                             val_items, cfg, 1, false, false, logger);
}

enum class OtherModality { Image, Table };

// Stage 2: trains one non-text encoder against the frozen text decoder.
inline StageResult stage2_other_pretrain(const std::vector<Entity>& train,
                                         const std::vector<Entity>& valid,
                                         Model& model, OtherModality modality,
                                         const StageConfig& cfg,
                                         MetricsLogger* logger = nullptr) {
  const bool use_images = modality == OtherModality::Image;
  auto has_modality = [&](const Entity& e) {
    return use_images ? !e.images.empty() : !e.table.empty();
  };
  std::vector<Entity> usable_train, usable_valid;
  for (const auto& e : train)
    if (has_modality(e)) usable_train.push_back(e);
  for (const auto& e : valid)
    if (has_modality(e)) usable_valid.push_back(e);
  if (usable_train.empty())
    throw CorpusError("stage 2: modality absent from every entity");

  auto items = detail::flat_items(usable_train);
  auto val_items = detail::flat_items(usable_valid);
  NamedParams trainable = use_images
                              ? model.image.trainable_params()
                              : NamedParams(model.table.named_params());
  return detail::train_stage(model, std::move(trainable), std::move(items),
                             val_items, cfg, 2, use_images, !use_images,
                             logger);
}

struct MultimodalOptions {
  bool use_images = true;
  bool use_table = true;
};

// Stage 3: end-to-end training with gated fusion; the frozen conv prefix and
// the unused fourth conv block stay fixed.
inline StageResult stage3_multimodal_train(const std::vector<Entity>& train,
                                           const std::vector<Entity>& valid,
                                           Model& model, const StageConfig& cfg,
                                           MultimodalOptions opt = {},
                                           MetricsLogger* logger = nullptr) {
  auto items = detail::loo_items(train, true);
  if (items.empty()) throw CorpusError("stage 3: no usable entities");
  auto val_items = detail::loo_items(valid, true);
  NamedParams trainable = model.text.named_params();
  if (opt.use_images)
    for (auto& p : model.image.trainable_params()) trainable.push_back(p);
  if (opt.use_table)
    for (auto& p : model.table.named_params()) trainable.push_back(p);
  return detail::train_stage(model, std::move(trainable), std::move(items),
                             val_items, cfg, 3, opt.use_images, opt.use_table,
                             logger);
}

}  // namespace msum

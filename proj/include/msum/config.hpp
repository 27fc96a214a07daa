#pragma once

// Run configuration: one JSON file wiring corpus, model, per-stage training
// settings, and decoding presets. Round-trips losslessly; CLI flags override
// individual fields.

#include <array>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "msum/corpus.hpp"
#include "msum/decoding.hpp"
#include "msum/image_encoder.hpp"
#include "msum/pipeline.hpp"
#include "msum/synth.hpp"
#include "msum/table_encoder.hpp"
#include "msum/transformer.hpp"

namespace msum {

struct RunConfig {
  std::string corpus;
  std::string out_dir = "run";
  uint64_t seed = 17;
  double valid_fraction = 0.05;
  size_t vocab_size = 1000;
  CorpusSpec corpus_spec;
  ModelConfig model;
  ImageConfig image;
  SynthConfig synth;
  std::array<StageConfig, 4> stages{default_stage_config(0),
                                    default_stage_config(1),
                                    default_stage_config(2),
                                    default_stage_config(3)};
  DecodeConfig decode = DecodeConfig::yelp();
  std::array<std::array<double, 2>, kHourClusters> hour_centroids =
      kDefaultHourCentroids;
};

namespace detail {

inline nlohmann::json stage_to_json(const StageConfig& s) {
  return {{"batch", s.batch},
          {"epochs", s.epochs},
          {"warmup", s.warmup},
          {"lr", s.lr},
          {"clip", s.clip},
          {"label_smoothing", s.label_smoothing},
          {"weight_decay", s.weight_decay},
          {"seed", s.seed}};
}

inline void stage_from_json(const nlohmann::json& j, StageConfig& s) {
  s.batch = j.value("batch", s.batch);
  s.epochs = j.value("epochs", s.epochs);
  s.warmup = j.value("warmup", s.warmup);
  s.lr = j.value("lr", s.lr);
  s.clip = j.value("clip", s.clip);
  s.label_smoothing = j.value("label_smoothing", s.label_smoothing);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.seed = j.value("seed", s.seed);
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["corpus"] = c.corpus;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["valid_fraction"] = c.valid_fraction;
  j["vocab_size"] = c.vocab_size;
  j["corpus_spec"] = {{"rating_min", c.corpus_spec.rating_min},
                      {"rating_max", c.corpus_spec.rating_max},
                      {"max_tokens", c.corpus_spec.max_tokens},
                      {"max_images", c.corpus_spec.max_images},
                      {"max_fields", c.corpus_spec.max_fields}};
  j["model"] = {{"e_d", c.model.e_d},
                {"e_t", c.model.e_t},
                {"enc_layers", c.model.enc_layers},
                {"dec_layers", c.model.dec_layers},
                {"heads", c.model.heads},
                {"max_len", c.model.max_len},
                {"ffn_mult", c.model.ffn_mult},
                {"gate_init_std", c.model.gate_init_std}};
  j["image"] = {{"channels", c.image.channels},
                {"height", c.image.height},
                {"width", c.image.width},
                {"block_channels", c.image.block_channels},
                {"frozen_prefix", c.image.frozen_prefix}};
  j["synth"] = {{"entities", c.synth.entities},
                {"reviews_per_entity", c.synth.reviews_per_entity},
                {"images_per_entity", c.synth.images_per_entity},
                {"image_size", c.synth.image_size},
                {"vocab_size", c.synth.vocab_size},
                {"max_tokens", c.synth.max_tokens}};
  for (int s = 0; s < 4; ++s)
    j["stage" + std::to_string(s)] =
        detail::stage_to_json(c.stages[static_cast<size_t>(s)]);
  j["decode"] = {{"beam_size", c.decode.beam_size},
                 {"length_penalty", c.decode.length_penalty},
                 {"max_len", c.decode.max_len},
                 {"early_stopping", c.decode.early_stopping}};
  j["hour_centroids"] = nlohmann::json::array();
  for (const auto& ctr : c.hour_centroids)
    j["hour_centroids"].push_back({ctr[0], ctr[1]});
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.corpus = j.value("corpus", c.corpus);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);
  c.valid_fraction = j.value("valid_fraction", c.valid_fraction);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  if (j.contains("corpus_spec")) {
    const auto& s = j["corpus_spec"];
    c.corpus_spec.rating_min = s.value("rating_min", c.corpus_spec.rating_min);
    c.corpus_spec.rating_max = s.value("rating_max", c.corpus_spec.rating_max);
    c.corpus_spec.max_tokens = s.value("max_tokens", c.corpus_spec.max_tokens);
    c.corpus_spec.max_images = s.value("max_images", c.corpus_spec.max_images);
    c.corpus_spec.max_fields = s.value("max_fields", c.corpus_spec.max_fields);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.model.e_d = m.value("e_d", c.model.e_d);
    c.model.e_t = m.value("e_t", c.model.e_t);
    c.model.enc_layers = m.value("enc_layers", c.model.enc_layers);
    c.model.dec_layers = m.value("dec_layers", c.model.dec_layers);
    c.model.heads = m.value("heads", c.model.heads);
    c.model.max_len = m.value("max_len", c.model.max_len);
    c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
    c.model.gate_init_std = m.value("gate_init_std", c.model.gate_init_std);
  }
  if (j.contains("image")) {
    const auto& i = j["image"];
    c.image.channels = i.value("channels", c.image.channels);
    c.image.height = i.value("height", c.image.height);
    c.image.width = i.value("width", c.image.width);
    c.image.block_channels =
        i.value("block_channels", c.image.block_channels);
    c.image.frozen_prefix = i.value("frozen_prefix", c.image.frozen_prefix);
  }
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    c.synth.entities = s.value("entities", c.synth.entities);
    c.synth.reviews_per_entity =
        s.value("reviews_per_entity", c.synth.reviews_per_entity);
    c.synth.images_per_entity =
        s.value("images_per_entity", c.synth.images_per_entity);
    c.synth.image_size = s.value("image_size", c.synth.image_size);
    c.synth.vocab_size = s.value("vocab_size", c.synth.vocab_size);
    c.synth.max_tokens = s.value("max_tokens", c.synth.max_tokens);
  }
  for (int s = 0; s < 4; ++s) {
    std::string key = "stage" + std::to_string(s);
    if (j.contains(key))
      detail::stage_from_json(j[key], c.stages[static_cast<size_t>(s)]);
  }
  if (j.contains("decode")) {
    const auto& d = j["decode"];
    if (d.is_string()) {
      std::string preset = d.get<std::string>();
      if (preset == "yelp") c.decode = DecodeConfig::yelp();
      else if (preset == "amazon") c.decode = DecodeConfig::amazon();
      else throw std::invalid_argument("unknown decode preset '" + preset + "'");
    } else {
      c.decode.beam_size = d.value("beam_size", c.decode.beam_size);
      c.decode.length_penalty =
          d.value("length_penalty", c.decode.length_penalty);
      c.decode.max_len = d.value("max_len", c.decode.max_len);
      c.decode.early_stopping =
          d.value("early_stopping", c.decode.early_stopping);
    }
  }
  if (j.contains("hour_centroids")) {
    const auto& h = j["hour_centroids"];
    if (h.size() != kHourClusters)
      throw std::invalid_argument("hour_centroids must list 4 pairs");
    for (size_t i = 0; i < kHourClusters; ++i) {
      c.hour_centroids[i][0] = h[i][0].get<double>();
      c.hour_centroids[i][1] = h[i][1].get<double>();
    }
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  in >> j;
  return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config '" + path + "'");
  out << run_config_to_json(c).dump(2) << "\n";
}

}  // namespace msum

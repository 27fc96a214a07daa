#pragma once

// Full model: text transformer plus image and table encoders, with a named
// parameter registry, hashing, and a little-endian checkpoint container
// (JSON header followed by raw float64 tensor data).

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msum/corpus.hpp"
#include "msum/image_encoder.hpp"
#include "msum/table_encoder.hpp"
#include "msum/transformer.hpp"
#include "msum/vocab.hpp"

namespace msum {

using NamedParams = std::vector<std::pair<std::string, NodePtr>>;

struct Model {
  ModelConfig cfg;
  ImageConfig img_cfg;
  TransformerParams text;
  ImageParams image;
  TableParams table;
  Vocab vocab;

  static Model init(const ModelConfig& cfg, const ImageConfig& img_cfg_in,
                    Vocab vocab, const std::vector<std::string>& categories,
                    uint64_t seed) {
    ImageConfig img_cfg = img_cfg_in;
    img_cfg.e_d = cfg.e_d;
    std::mt19937_64 rng(seed);
    Model m;
    m.cfg = cfg;
    m.img_cfg = img_cfg;
    m.text = TransformerParams::init(cfg, rng);
    m.image = ImageParams::init(img_cfg, rng);
    m.table = TableParams::init(cfg.e_t, cfg.e_d, vocab.size(), categories, rng);
    m.vocab = std::move(vocab);
    return m;
  }

  NamedParams named_params() const {
    NamedParams out = text.named_params();
    for (auto& p : image.named_params()) out.push_back(p);
    for (auto& p : table.named_params()) out.push_back(p);
    return out;
  }

  void zero_grads() const {
    for (auto& [n, p] : named_params()) p->zero_grad();
  }

  // Encodes whichever inputs are present for one instance.
  EncodedModalities encode(Tape& tape,
                           const std::vector<std::vector<int>>& sources,
                           const std::vector<RasterImage>& images,
                           const TableData& tbl) const {
    EncodedModalities mods;
    if (!sources.empty()) mods.text = encode_text(tape, sources, text);
    if (!images.empty()) mods.image = encode_images(tape, images, image);
    if (!tbl.empty())
      mods.table = encode_table(tape, tbl, table, table.tok_emb, vocab,
                                /*max_fields=*/256);
    return mods;
  }

  // Teacher-forced loss for one target sequence given encoded modalities.
  NodePtr sequence_loss(Tape& tape, const EncodedModalities& mods,
                        const std::vector<int>& target_tokens, double sd,
                        double label_smoothing,
                        GateTrace* trace = nullptr) const {
    if (target_tokens.size() < 2)
      throw std::invalid_argument("target too short for teacher forcing");
    std::vector<int> inputs(target_tokens.begin(), target_tokens.end() - 1);
    std::vector<int> gold(target_tokens.begin() + 1, target_tokens.end());
    auto logp = forward_log_probs(tape, mods, inputs, sd, text, trace);
    return tape.smoothed_nll(logp, gold, label_smoothing);
  }
};

inline uint64_t hash_tensor(const Mat& m) {
  uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const size_t n = static_cast<size_t>(m.size()) * sizeof(double);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t hash_params(const NamedParams& params) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, p] : params) {
    for (unsigned char c : name) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    uint64_t th = hash_tensor(p->value);
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<unsigned char>(th >> (8 * i));
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline nlohmann::json model_config_json(const Model& m) {
  nlohmann::json j;
  j["e_d"] = m.cfg.e_d;
  j["e_t"] = m.cfg.e_t;
  j["enc_layers"] = m.cfg.enc_layers;
  j["dec_layers"] = m.cfg.dec_layers;
  j["heads"] = m.cfg.heads;
  j["max_len"] = m.cfg.max_len;
  j["vocab"] = m.cfg.vocab;
  j["ffn_mult"] = m.cfg.ffn_mult;
  j["gate_init_std"] = m.cfg.gate_init_std;
  j["image"] = {{"channels", m.img_cfg.channels},
                {"height", m.img_cfg.height},
                {"width", m.img_cfg.width},
                {"block_channels", m.img_cfg.block_channels},
                {"frozen_prefix", m.img_cfg.frozen_prefix}};
  return j;
}

inline void model_config_from_json(const nlohmann::json& j, ModelConfig& cfg,
                                   ImageConfig& img) {
  cfg.e_d = j.at("e_d").get<int>();
  cfg.e_t = j.at("e_t").get<int>();
  cfg.enc_layers = j.at("enc_layers").get<int>();
  cfg.dec_layers = j.at("dec_layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.vocab = j.at("vocab").get<int>();
  cfg.ffn_mult = j.at("ffn_mult").get<int>();
  cfg.gate_init_std = j.at("gate_init_std").get<double>();
  const auto& ij = j.at("image");
  img.channels = ij.at("channels").get<int>();
  img.height = ij.at("height").get<int>();
  img.width = ij.at("width").get<int>();
  img.block_channels = ij.at("block_channels").get<std::vector<int>>();
  img.frozen_prefix = ij.at("frozen_prefix").get<int>();
  img.e_d = cfg.e_d;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'U', 'M',
                                             'C', 'K', 'P', 'T'};

inline void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::json header;
  header["config"] = detail::model_config_json(m);
  header["vocab"] = m.vocab.words();
  std::vector<std::string> categories(m.table.cat_ids.size());
  for (const auto& [name, id] : m.table.cat_ids)
    categories[static_cast<size_t>(id)] = name;
  header["categories"] = categories;
  auto params = m.named_params();
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, p] : params)
    header["tensors"].push_back({{"name", name},
                                 {"rows", p->value.rows()},
                                 {"cols", p->value.cols()}});
  std::string hs = header.dump();

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    out.write(kCheckpointMagic, 8);
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, p] : params)
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot finalize checkpoint '" + path + "'");
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a checkpoint file");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  auto header = nlohmann::json::parse(hs);

  ModelConfig cfg;
  ImageConfig img_cfg;
  detail::model_config_from_json(header.at("config"), cfg, img_cfg);
  Vocab vocab;
  for (const auto& w : header.at("vocab")) vocab.add_word(w.get<std::string>());
  std::vector<std::string> categories;
  for (const auto& c : header.at("categories"))
    categories.push_back(c.get<std::string>());

  Model m = Model::init(cfg, img_cfg, std::move(vocab), categories, /*seed=*/0);
  auto params = m.named_params();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error("checkpoint tensor count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& tj = tensors[i];
    if (tj.at("name").get<std::string>() != params[i].first)
      throw std::runtime_error("checkpoint tensor order mismatch at '" +
                               params[i].first + "'");
    Eigen::Index r = tj.at("rows").get<Eigen::Index>();
    Eigen::Index c = tj.at("cols").get<Eigen::Index>();
    auto& p = params[i].second;
    if (r != p->value.rows() || c != p->value.cols())
      throw std::runtime_error("checkpoint shape mismatch for '" +
                               params[i].first + "'");
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(r * c * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint '" + path + "'");
  return m;
}

}  // namespace msum

// multisum: synthesize a corpus, train the four pipeline stages, generate
// summaries, score them, and export multimodal gate traces.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msum/config.hpp"
#include "msum/corpus.hpp"
#include "msum/decoding.hpp"
#include "msum/evaluation.hpp"
#include "msum/model.hpp"
#include "msum/pipeline.hpp"
#include "msum/synth.hpp"

namespace fs = std::filesystem;
using namespace msum;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (const char* env = std::getenv("MULTISUM_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("MULTISUM_SEED must be an unsigned integer");
    }
  }
  return cfg;
}

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string hex64(uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// Deterministic entity split: seeded shuffle, tail becomes validation.
void split_corpus(std::vector<Entity> entities, double valid_fraction,
                  uint64_t seed, std::vector<Entity>& train,
                  std::vector<Entity>& valid) {
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  std::shuffle(entities.begin(), entities.end(), rng);
  size_t n_valid = static_cast<size_t>(valid_fraction *
                                       static_cast<double>(entities.size()));
  if (valid_fraction > 0.0 && n_valid == 0 && entities.size() > 1) n_valid = 1;
  valid.assign(entities.end() - static_cast<long>(n_valid), entities.end());
  train.assign(entities.begin(), entities.end() - static_cast<long>(n_valid));
}

std::string stage_ckpt(const std::string& run_dir, int stage) {
  return run_dir + "/stage" + std::to_string(stage) + ".ckpt";
}

// Latest checkpoint from a stage strictly before `stage`, empty if none.
std::string latest_ckpt_before(const std::string& run_dir, int stage) {
  for (int s = stage - 1; s >= 0; --s)
    if (fs::exists(stage_ckpt(run_dir, s))) return stage_ckpt(run_dir, s);
  return "";
}

std::string default_ckpt(const std::string& run_dir) {
  std::string p = latest_ckpt_before(run_dir, 4);
  if (p.empty())
    throw std::runtime_error("no checkpoint found under '" + run_dir + "'");
  return p;
}

int cmd_synth(const std::string& config_path, const std::string& out,
              uint64_t seed_override, bool has_seed) {
  RunConfig cfg = load_config_or_default(config_path);
  if (has_seed) cfg.seed = seed_override;
  auto entities = generate_synthetic_corpus(cfg.synth, cfg.seed);
  save_corpus(out, entities);
  std::cout << "wrote " << entities.size() << " entities to " << out << "\n";
  return 0;
}

struct TrainFlags {
  std::string stages = "0,1,2,3";
  bool no_image = false;
  bool no_table = false;
  bool skip_stage2 = false;
  bool from_scratch = false;
};

std::vector<int> parse_stages(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    if (tok.size() != 1 || tok[0] < '0' || tok[0] > '3')
      throw UsageError("--stages expects a comma list drawn from 0,1,2,3");
    out.push_back(tok[0] - '0');
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw UsageError("--stages selected no stages");
  return out;
}

int cmd_train(const std::string& config_path, std::string run_dir,
              const TrainFlags& flags) {
  RunConfig cfg = load_config_or_default(config_path);
  if (!run_dir.empty()) cfg.out_dir = run_dir;
  if (cfg.corpus.empty()) throw UsageError("config must set a corpus path");

  auto stages = parse_stages(flags.stages);
  if (flags.skip_stage2)
    stages.erase(std::remove(stages.begin(), stages.end(), 2), stages.end());

  fs::create_directories(cfg.out_dir);
  save_run_config(cfg, cfg.out_dir + "/config.json");
  {
    std::ofstream h(cfg.out_dir + "/corpus.hash");
    h << hex64(hash_file(cfg.corpus)) << "\n";
  }

  // Corpus, vocabulary, split.
  auto raw = load_corpus(cfg.corpus, Vocab{}, cfg.corpus_spec);
  auto vocab = Vocab::build(corpus_texts(raw), cfg.vocab_size);
  tokenize_corpus(raw, vocab, cfg.corpus_spec);
  auto categories = collect_categories(raw);
  std::vector<Entity> train, valid;
  split_corpus(std::move(raw), cfg.valid_fraction, cfg.seed, train, valid);

  // Model: resume from the latest prior checkpoint unless training from
  // scratch or starting at stage 0.
  ModelConfig mcfg = cfg.model;
  mcfg.vocab = static_cast<int>(vocab.size());
  Model model = Model::init(mcfg, cfg.image, vocab, categories, cfg.seed);
  if (stages.front() > 0 && !flags.from_scratch) {
    std::string prev = latest_ckpt_before(cfg.out_dir, stages.front());
    if (prev.empty())
      throw std::runtime_error(
          "stage " + std::to_string(stages.front()) +
          " needs an earlier-stage checkpoint in '" + cfg.out_dir +
          "' (or pass --from-scratch)");
    model = load_checkpoint(prev);
    std::cout << "resumed from " << prev << "\n";
  }

  MetricsLogger logger(cfg.out_dir + "/metrics.jsonl");
  const bool use_images = !flags.no_image;
  const bool use_table = !flags.no_table;

  for (int stage : stages) {
    const auto& scfg = cfg.stages[static_cast<size_t>(stage)];
    StageResult res;
    switch (stage) {
      case 0:
        res = stage0_denoise_pretrain(train, valid, model, scfg, &logger);
        break;
      case 1:
        res = stage1_text_pretrain(train, valid, model, scfg, &logger);
        break;
      case 2: {
        if (!use_images && !use_table)
          throw UsageError("stage 2 with both modalities disabled is empty");
        if (use_images)
          res = stage2_other_pretrain(train, valid, model,
                                      OtherModality::Image, scfg, &logger);
        if (use_table)
          res = stage2_other_pretrain(train, valid, model,
                                      OtherModality::Table, scfg, &logger);
        break;
      }
      case 3: {
        MultimodalOptions opt{use_images, use_table};
        res = stage3_multimodal_train(train, valid, model, scfg, opt, &logger);
        break;
      }
    }
    save_checkpoint(model, stage_ckpt(cfg.out_dir, stage));
    std::cout << "stage " << stage << ": val loss "
              << res.initial_val_loss << " -> " << res.final_val_loss()
              << "; saved " << stage_ckpt(cfg.out_dir, stage) << "\n";
  }
  return 0;
}

int cmd_generate(const std::string& config_path, std::string checkpoint,
                 std::string corpus_path, const std::string& out) {
  RunConfig cfg = load_config_or_default(config_path);
  if (checkpoint.empty()) checkpoint = default_ckpt(cfg.out_dir);
  if (corpus_path.empty()) corpus_path = cfg.corpus;
  if (corpus_path.empty()) throw UsageError("no corpus path given");

  Model model = load_checkpoint(checkpoint);
  auto entities = load_corpus(corpus_path, model.vocab, cfg.corpus_spec);
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot write '" + out + "'");
  for (const auto& e : entities) {
    auto res = generate_summary(e, model, cfg.decode);
    nlohmann::json j{{"entity_id", e.id},
                     {"summary", res.text},
                     {"pruned_fallback", res.pruned_fallback}};
    os << j.dump() << "\n";
  }
  std::cout << "wrote " << entities.size() << " summaries to " << out << "\n";
  return 0;
}

std::map<std::string, std::string> read_summaries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out[j.at("entity_id").get<std::string>()] =
        j.at("summary").get<std::string>();
  }
  return out;
}

// References: either {"entity_id","references":[...]} lines or corpus
// entity lines, whose review texts become the reference set.
std::map<std::string, std::vector<std::string>> read_references(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    std::string id = j.contains("entity_id")
                         ? j.at("entity_id").get<std::string>()
                         : j.at("id").get<std::string>();
    std::vector<std::string>& refs = out[id];
    if (j.contains("references")) {
      for (const auto& r : j.at("references"))
        refs.push_back(r.get<std::string>());
    } else {
      for (const auto& r : j.at("reviews"))
        refs.push_back(r.at("text").get<std::string>());
    }
  }
  return out;
}

int cmd_evaluate(const std::string& summaries_path,
                 const std::string& references_path,
                 const std::string& baseline_path, const std::string& out,
                 int resamples, uint64_t seed) {
  auto summaries = read_summaries(summaries_path);
  auto references = read_references(references_path);
  std::map<std::string, std::string> baseline;
  if (!baseline_path.empty()) baseline = read_summaries(baseline_path);

  auto score_system = [&](const std::map<std::string, std::string>& sys) {
    std::map<RougeVariant, std::vector<double>> per;
    nlohmann::json per_entity = nlohmann::json::array();
    for (const auto& [id, text] : sys) {
      auto rit = references.find(id);
      if (rit == references.end())
        throw std::runtime_error("no references for entity '" + id + "'");
      std::vector<std::vector<std::string>> refs;
      for (const auto& r : rit->second) refs.push_back(metric_tokens(r));
      auto cand = metric_tokens(text);
      nlohmann::json row{{"entity_id", id}};
      for (auto v : {RougeVariant::R1, RougeVariant::R2, RougeVariant::RL}) {
        auto s = rouge_multi(cand, refs, v);
        per[v].push_back(s.f1);
        const char* key = v == RougeVariant::R1   ? "rouge1"
                          : v == RougeVariant::R2 ? "rouge2"
                                                  : "rougeL";
        row[key] = s.f1;
      }
      per_entity.push_back(row);
    }
    return std::make_pair(per, per_entity);
  };

  auto [per, per_entity] = score_system(summaries);
  auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return v.empty() ? 0.0 : t / static_cast<double>(v.size());
  };

  nlohmann::json report;
  report["rouge1"] = mean(per[RougeVariant::R1]);
  report["rouge2"] = mean(per[RougeVariant::R2]);
  report["rougeL"] = mean(per[RougeVariant::RL]);
  report["per_entity"] = per_entity;
  report["significance"] = nlohmann::json::object();
  if (!baseline.empty()) {
    if (baseline.size() != summaries.size())
      throw std::runtime_error("baseline and summaries cover different entities");
    auto [bper, bpe] = score_system(baseline);
    nlohmann::json sig;
    sig["resamples"] = resamples;
    sig["seed"] = seed;
    sig["rouge1_p"] = paired_bootstrap(per[RougeVariant::R1],
                                       bper[RougeVariant::R1], resamples, seed);
    sig["rouge2_p"] = paired_bootstrap(per[RougeVariant::R2],
                                       bper[RougeVariant::R2], resamples, seed);
    sig["rougeL_p"] = paired_bootstrap(per[RougeVariant::RL],
                                       bper[RougeVariant::RL], resamples, seed);
    report["significance"] = sig;
  }

  if (out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::ofstream os(out);
    os << report.dump(2) << "\n";
    std::cout << "wrote report to " << out << "\n";
  }
  return 0;
}

int cmd_inspect_gates(const std::string& config_path, std::string checkpoint,
                      std::string corpus_path, const std::string& entity_id,
                      const std::string& out_prefix) {
  RunConfig cfg = load_config_or_default(config_path);
  if (checkpoint.empty()) checkpoint = default_ckpt(cfg.out_dir);
  if (corpus_path.empty()) corpus_path = cfg.corpus;
  if (corpus_path.empty()) throw UsageError("no corpus path given");

  Model model = load_checkpoint(checkpoint);
  auto entities = load_corpus(corpus_path, model.vocab, cfg.corpus_spec);
  const Entity* target = nullptr;
  if (entity_id.empty()) {
    target = &entities.front();
  } else {
    for (const auto& e : entities)
      if (e.id == entity_id) target = &e;
    if (!target)
      throw std::runtime_error("entity '" + entity_id + "' not in corpus");
  }

  SummaryResult summary;
  auto trace = trace_gates(*target, model, cfg.decode, &summary);
  std::vector<int> inputs = summary.tokens;
  if (inputs.size() > 1 && inputs.back() == Vocab::kEos) inputs.pop_back();
  std::vector<std::string> words;
  for (int t : inputs) words.push_back(model.vocab.word(t));

  export_gate_csv(out_prefix + ".csv", words, trace);
  export_gate_svg(out_prefix + ".svg", words, trace);
  std::cout << "entity " << target->id << ": \"" << summary.text << "\"\n"
            << "mean alpha " << trace.mean_alpha << ", mean beta "
            << trace.mean_beta << "\n"
            << "wrote " << out_prefix << ".csv and " << out_prefix << ".svg\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised multimodal opinion summarization"};
  app.require_subcommand(1);

  std::string config_path, out, run_dir, checkpoint, corpus_path;
  std::string references_path, baseline_path, entity_id, out_prefix;
  uint64_t seed = 17;
  int resamples = 1000;
  TrainFlags tf;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", config_path, "run configuration JSON");
  synth->add_option("--out", out, "output corpus JSONL")->required();
  auto* seed_opt = synth->add_option("--seed", seed, "override the seed");

  auto* train = app.add_subcommand("train", "run the training stages");
  train->add_option("--config", config_path, "run configuration JSON")
      ->required();
  train->add_option("--run-dir", run_dir, "override the output directory");
  train->add_option("--stages", tf.stages, "comma list from 0,1,2,3");
  train->add_flag("--no-image", tf.no_image, "drop the image modality");
  train->add_flag("--no-table", tf.no_table, "drop the table modality");
  train->add_flag("--skip-stage2", tf.skip_stage2,
                  "skip non-text encoder pretraining");
  train->add_flag("--from-scratch", tf.from_scratch,
                  "do not resume from earlier checkpoints");

  auto* generate = app.add_subcommand("generate", "decode summaries");
  generate->add_option("--config", config_path, "run configuration JSON");
  generate->add_option("--checkpoint", checkpoint, "model checkpoint");
  generate->add_option("--corpus", corpus_path, "corpus JSONL");
  generate->add_option("--out", out, "summaries JSONL")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score generated summaries");
  evaluate->add_option("--summaries", out, "summaries JSONL")->required();
  evaluate->add_option("--references", references_path, "references JSONL")
      ->required();
  evaluate->add_option("--baseline", baseline_path,
                       "second system for significance testing");
  evaluate->add_option("--report", run_dir, "report JSON path");
  evaluate->add_option("--resamples", resamples, "bootstrap resamples");
  evaluate->add_option("--seed", seed, "bootstrap seed");

  auto* gates = app.add_subcommand("inspect-gates", "export gate traces");
  gates->add_option("--config", config_path, "run configuration JSON");
  gates->add_option("--checkpoint", checkpoint, "model checkpoint");
  gates->add_option("--corpus", corpus_path, "corpus JSONL");
  gates->add_option("--entity", entity_id, "entity id (default: first)");
  gates->add_option("--out-prefix", out_prefix, "output file prefix")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      return cmd_synth(config_path, out, seed, seed_opt->count() > 0);
    if (train->parsed()) return cmd_train(config_path, run_dir, tf);
    if (generate->parsed())
      return cmd_generate(config_path, checkpoint, corpus_path, out);
    if (evaluate->parsed())
      return cmd_evaluate(out, references_path, baseline_path, run_dir,
                          resamples, seed);
    if (gates->parsed())
      return cmd_inspect_gates(config_path, checkpoint, corpus_path, entity_id,
                               out_prefix);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

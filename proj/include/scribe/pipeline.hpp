#pragma once

// End-to-end orchestration over a working directory: staged execution with
// per-stage completion markers (so interrupted runs resume), a single-writer
// lock file, reward ablation arms, generation/report artifacts, and the
// blinded rating-bundle export.

#include <fcntl.h>
#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "scribe/checkpoint.hpp"
#include "scribe/config.hpp"
#include "scribe/dataset.hpp"
#include "scribe/metrics.hpp"
#include "scribe/reviewer.hpp"
#include "scribe/writer.hpp"

namespace scribe {

struct PipelinePaths {
  std::string workdir;
  std::string lock;
  std::string done_dir;
  std::string resolved_config;
  std::string data;
  std::string reader_dir;
  std::string enriched;
  std::string writer_dir;
  std::string writer_log;
  std::string reviewer_dir;
  std::string finetuned_dir;
  std::string finetune_log;
  std::string generations;
  std::string report;
};

inline PipelinePaths pipeline_paths(const std::string& workdir) {
  PipelinePaths p;
  p.workdir = workdir;
  p.lock = workdir + "/lock";
  p.done_dir = workdir + "/done";
  p.resolved_config = workdir + "/config.resolved";
  p.data = workdir + "/normalized.jsonl";
  p.reader_dir = workdir + "/reader";
  p.enriched = workdir + "/enriched.jsonl";
  p.writer_dir = workdir + "/writer_pre";
  p.writer_log = workdir + "/writer_pretrain.jsonl";
  p.reviewer_dir = workdir + "/reviewer";
  p.finetuned_dir = workdir + "/writer_rl";
  p.finetune_log = workdir + "/finetune.jsonl";
  p.generations = workdir + "/generations.jsonl";
  p.report = workdir + "/report.json";
  return p;
}

// One writer per working directory. Read-only commands never take this.
class PipelineLock {
 public:
  explicit PipelineLock(std::string path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw UsageError("working directory is locked by '" + path_ +
                       "'; another run may be active (delete the file if it "
                       "is stale)");
    std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd_, pid.data(), pid.size());
    (void)n;
  }
  PipelineLock(const PipelineLock&) = delete;
  PipelineLock& operator=(const PipelineLock&) = delete;
  ~PipelineLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }

 private:
  std::string path_;
  int fd_ = -1;
};

inline bool stage_done(const PipelinePaths& pp, const std::string& stage) {
  return std::filesystem::exists(pp.done_dir + "/" + stage);
}

inline void mark_stage_done(const PipelinePaths& pp, const std::string& stage) {
  std::filesystem::create_directories(pp.done_dir);
  detail::write_text_file(pp.done_dir + "/" + stage, "ok\n");
}

// ---------------------------------------------------------------------------
// Reward ablation arms: which rewards the fine-tuning stage optimizes.

enum class RewardArm { All, Quality, Adversarial, Alignment };

inline RewardArm parse_reward_arm(const std::string& s) {
  if (s == "all") return RewardArm::All;
  if (s == "quality") return RewardArm::Quality;
  if (s == "adversarial") return RewardArm::Adversarial;
  if (s == "alignment") return RewardArm::Alignment;
  throw UsageError("unknown rewards arm '" + s +
                   "' (quality|adversarial|alignment|all)");
}

inline const char* reward_arm_name(RewardArm a) {
  switch (a) {
    case RewardArm::Quality: return "quality";
    case RewardArm::Adversarial: return "adversarial";
    case RewardArm::Alignment: return "alignment";
    default: return "all";
  }
}

// Single-reward arms zero out the other coefficients.
inline void apply_reward_arm(RLConfig& rl, RewardArm arm) {
  switch (arm) {
    case RewardArm::All:
      return;
    case RewardArm::Quality:
      rl.lambda_ar = 0.0;
      rl.lambda_mr = 0.0;
      return;
    case RewardArm::Adversarial:
      rl.lambda_q = 0.0;
      rl.lambda_mr = 0.0;
      return;
    case RewardArm::Alignment:
      rl.lambda_q = 0.0;
      rl.lambda_ar = 0.0;
      return;
  }
}

// ---------------------------------------------------------------------------
// Generation records (JSON lines).

struct GeneratedRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::string text;
  double logprob_sum = 0.0;
};

inline void write_generations(const std::string& path,
                              const std::vector<GeneratedRecord>& recs) {
  std::string out;
  for (const auto& r : recs) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["tokens"] = r.tokens;
    j["text"] = r.text;
    j["logprob_sum"] = r.logprob_sum;
    out += j.dump();
    out += '\n';
  }
  detail::write_text_file(path, out);
}

inline std::vector<GeneratedRecord> load_generations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open generations file: " + path);
  std::vector<GeneratedRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = nlohmann::ordered_json::parse(line, nullptr, false);
    const std::string at = path + ":" + std::to_string(line_no);
    if (j.is_discarded()) throw DataError(at + ": not valid JSON");
    if (!j.contains("id") || !j["id"].is_string())
      throw DataError(at + ": missing string field 'id'");
    GeneratedRecord r;
    r.id = j["id"].get<std::string>();
    if (j.contains("tokens")) {
      if (!j["tokens"].is_array())
        throw DataError(at + ": 'tokens' must be an array");
      for (const auto& t : j["tokens"]) r.tokens.push_back(t.get<std::string>());
    }
    if (j.contains("text")) r.text = j["text"].get<std::string>();
    if (j.contains("logprob_sum"))
      r.logprob_sum = j["logprob_sum"].get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage bodies, shared by run_pipeline and the standalone commands.

inline std::vector<const KnowledgeGraph*> graphs_of(
    const std::vector<DocumentInstance>& data) {
  std::vector<const KnowledgeGraph*> out;
  out.reserve(data.size());
  for (const auto& inst : data) out.push_back(&inst.graph);
  return out;
}

inline std::vector<const DocumentInstance*> instance_ptrs(
    const std::vector<DocumentInstance>& data) {
  std::vector<const DocumentInstance*> out;
  out.reserve(data.size());
  for (const auto& inst : data) out.push_back(&inst);
  return out;
}

inline ReaderModel train_reader_on(const std::vector<DocumentInstance>& data,
                                   const PipelineConfig& cfg) {
  auto graphs = graphs_of(data);
  TranseConfig tc = cfg.transe;
  tc.d = cfg.reader.d;
  EmbeddingTable table = pretrain_transe(graphs, tc);
  return train_link_predictor(graphs, table, cfg.reader);
}

inline std::vector<DocumentInstance> enrich_dataset(
    const ReaderModel& m, std::vector<DocumentInstance> data) {
  for (auto& inst : data) {
    if (inst.skip_link_prediction) continue;
    inst.graph = enrich_graph(inst.graph, predict_links(m, inst.graph));
  }
  return data;
}

// Greedy-decode BLEU in placeholder space, used for early stopping.
inline double dev_corpus_bleu(const WriterModel& m,
                              const std::vector<const DocumentInstance*>& dev) {
  if (dev.empty()) return 0.0;
  GenerationConfig gc;
  gc.max_length = m.cfg.max_length;
  std::vector<TokenSeq> hyps, refs;
  for (const DocumentInstance* inst : dev) {
    hyps.push_back(generate(m, inst->graph, gc).tokens);
    refs.push_back(apply_placeholders(*inst->abstract, inst->graph));
  }
  return corpus_bleu(hyps, refs);
}

// Early stopping scores dev_data when given, else a trailing slice of the
// training set (a stand-in dev split for small runs).
inline WriterModel pretrain_writer_stage(
    const std::vector<DocumentInstance>& data, const PipelineConfig& cfg,
    std::vector<WriterStepLog>* log = nullptr,
    const std::vector<DocumentInstance>* dev_data = nullptr) {
  Vocabulary vocab =
      build_vocabulary(data, cfg.vocab_min_freq, cfg.vocab_max_size);
  auto ptrs = instance_ptrs(data);
  std::function<double(const WriterModel&)> dev_score;
  if (cfg.early_stop == "dev-bleu") {
    std::vector<const DocumentInstance*> dev;
    for (const DocumentInstance& inst : dev_data ? *dev_data : data)
      if (inst.abstract && !inst.abstract->empty() &&
          !inst.graph.nodes.empty())
        dev.push_back(&inst);
    if (!dev_data && dev.size() > 8) dev.erase(dev.begin(), dev.end() - 8);
    if (!dev.empty())
      dev_score = [dev](const WriterModel& m) { return dev_corpus_bleu(m, dev); };
  }
  return pretrain_writer(ptrs, vocab, cfg.writer, cfg.writer_train, dev_score,
                         log);
}

inline Reviewer pretrain_reviewer_stage(
    const WriterModel& writer, const std::vector<DocumentInstance>& data,
    const PipelineConfig& cfg) {
  std::vector<std::vector<int>> real, fake;
  Rng rng(cfg.disc_train.seed);
  Rng sample_rng = rng.fork(0xFA4E);
  GenerationConfig gc;
  gc.strategy = DecodeStrategy::Sample;
  gc.max_length = std::max(1, writer.cfg.max_length - 1);
  size_t i = 0;
  for (const auto& inst : data) {
    if (!inst.abstract || inst.abstract->empty() || inst.graph.nodes.empty())
      continue;
    real.push_back(
        writer.vocab.encode(apply_placeholders(*inst.abstract, inst.graph)));
    gc.seed = sample_rng.fork(i++).next_u64();
    std::vector<int> ids = generate(writer, inst.graph, gc).ids;
    if (ids.empty()) ids.push_back(Vocabulary::kUnk);
    fake.push_back(std::move(ids));
  }
  Reviewer rev;
  rev.disc = pretrain_discriminator(real, fake, writer.vocab.size(), cfg.disc,
                                    cfg.disc_train);
  rev.align = pretrain_alignment(instance_ptrs(data), writer, cfg.align_train);
  return rev;
}

inline WriterModel finetune_stage(const WriterModel& writer,
                                  const Reviewer& rev,
                                  const std::vector<DocumentInstance>& data,
                                  const PipelineConfig& cfg, RewardArm arm,
                                  std::vector<FinetuneStepLog>* log = nullptr) {
  RLConfig rl = cfg.rl;
  apply_reward_arm(rl, arm);
  return finetune(writer, rev, instance_ptrs(data), rl, cfg.finetune, log);
}

inline GenerationConfig resolved_gen_config(const PipelineConfig& cfg,
                                            const WriterConfig& wcfg) {
  GenerationConfig gc = parse_strategy(cfg.gen_strategy);
  gc.temperature = cfg.gen_temperature;
  gc.max_length = cfg.gen_max_length > 0 ? cfg.gen_max_length : wcfg.max_length;
  return gc;
}

inline std::vector<GeneratedRecord> generate_stage(
    const WriterModel& m, const std::vector<DocumentInstance>& data,
    const PipelineConfig& cfg) {
  GenerationConfig gc = resolved_gen_config(cfg, m.cfg);
  Rng rng(cfg.gen_seed);
  std::vector<GeneratedRecord> out;
  out.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    GeneratedRecord rec;
    rec.id = data[i].id;
    if (!data[i].graph.nodes.empty()) {
      gc.seed = rng.fork(i).next_u64();
      GeneratedParagraph g = generate(m, data[i].graph, gc);
      rec.tokens = std::move(g.tokens);
      rec.text = std::move(g.text);
      rec.logprob_sum = g.logprob_sum;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// Pairs generations with reference abstracts by id and scores the requested
// metrics on surface tokens (placeholders restored on the hypothesis side).
inline nlohmann::ordered_json metric_report(
    const std::vector<GeneratedRecord>& gens,
    const std::vector<DocumentInstance>& refs, const PipelineConfig& cfg) {
  std::vector<std::string> wanted = parse_metric_list(cfg.metrics);
  std::unordered_map<std::string, const DocumentInstance*> by_id;
  for (const auto& inst : refs)
    if (inst.abstract && !inst.abstract->empty()) by_id[inst.id] = &inst;

  std::vector<TokenSeq> hyps, rtoks;
  std::vector<std::string> ids;
  for (const auto& g : gens) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) continue;
    hyps.push_back(detail::split_ws(g.text));
    rtoks.push_back(*it->second->abstract);
    ids.push_back(g.id);
  }
  if (hyps.empty())
    throw DataError("evaluate: no generation has a reference abstract");

  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["n"] = hyps.size();
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (size_t i = 0; i < ids.size(); ++i) {
    nlohmann::ordered_json row;
    row["id"] = ids[i];
    per.push_back(std::move(row));
  }
  for (const std::string& m : wanted) {
    if (m == "bleu") {
      j["bleu"] = corpus_bleu(hyps, rtoks);
      for (size_t i = 0; i < ids.size(); ++i)
        per[i]["sentence_bleu"] = sentence_bleu(hyps[i], rtoks[i]);
    } else if (m == "cider") {
      j["cider"] = cider(hyps, rtoks);
      auto ci = detail::cider_instances(hyps, rtoks, 4);
      for (size_t i = 0; i < ids.size(); ++i) per[i]["cider"] = ci[i];
    } else {  // meteor
      if (cfg.meteor_cmd.empty())
        throw UsageError("metric 'meteor' requires a scorer command");
      auto v = meteor(hyps, rtoks, cfg.meteor_cmd);
      j["meteor"] = *v;
    }
  }
  j["per_instance"] = std::move(per);
  nlohmann::ordered_json conf = nlohmann::ordered_json::object();
  for (const auto& [k, v] : resolved_kv(cfg)) conf[k] = v;
  j["config"] = std::move(conf);
  return j;
}

// ---------------------------------------------------------------------------
// Step logs (JSON lines).

inline void write_writer_log(const std::string& path,
                             const std::vector<WriterStepLog>& steps) {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["per_token_loss"] = s.per_token_loss;
    j["lr"] = s.lr;
    out += j.dump();
    out += '\n';
  }
  detail::write_text_file(path, out);
}

inline void write_finetune_log(const std::string& path,
                               const std::vector<FinetuneStepLog>& steps) {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["loss_sl"] = s.loss_sl;
    j["loss_rl"] = s.loss_rl;
    j["mean_R"] = s.mean_R;
    j["mean_r1"] = s.mean_r1;
    j["mean_r2"] = s.mean_r2;
    j["mean_r3"] = s.mean_r3;
    j["mean_r3_per_token"] = s.mean_r3_per_token;
    out += j.dump();
    out += '\n';
  }
  detail::write_text_file(path, out);
}

// ---------------------------------------------------------------------------
// The end-to-end run.

struct PipelineOptions {
  std::string data_path;
  std::string format = "normalized";  // normalized | agenda
  bool no_link_prediction = false;
  RewardArm rewards = RewardArm::All;
  bool fresh = false;  // ignore completion markers and rerun every stage
};

struct PipelineResult {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  std::string report_path;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg,
                                   const std::string& workdir,
                                   const PipelineOptions& opt,
                                   std::ostream* log = nullptr) {
  validate_pipeline_config(cfg);
  std::filesystem::create_directories(workdir);
  PipelinePaths pp = pipeline_paths(workdir);
  PipelineLock lock(pp.lock);
  detail::write_text_file(pp.resolved_config, config_file_text(cfg));

  PipelineResult res;
  auto stage = [&](const char* name, auto&& body) {
    if (!opt.fresh && stage_done(pp, name)) {
      res.stages_skipped.push_back(name);
      if (log) *log << "[skip] " << name << "\n";
      return;
    }
    if (log) *log << "[run ] " << name << "\n";
    const std::string tag = std::string("stage ") + name + ": ";
    try {
      body();
    } catch (const UsageError& e) {
      throw UsageError(tag + e.what());
    } catch (const DataError& e) {
      throw DataError(tag + e.what());
    } catch (const std::exception& e) {
      throw TrainError(tag + e.what());
    }
    mark_stage_done(pp, name);
    res.stages_run.push_back(name);
  };

  stage("prepare", [&] {
    auto data = opt.format == "agenda" ? adapt_upstream_dataset(opt.data_path)
                                       : load_dataset(opt.data_path);
    if (data.empty())
      throw DataError("dataset '" + opt.data_path + "' is empty");
    save_dataset(pp.data, data);
  });

  stage("train-reader", [&] {
    if (opt.no_link_prediction) return;  // ablation: nothing to train
    auto data = load_dataset(pp.data);
    save_reader_checkpoint(pp.reader_dir, train_reader_on(data, cfg), cfg);
  });

  stage("predict-links", [&] {
    auto data = load_dataset(pp.data);
    if (opt.no_link_prediction) {
      save_dataset(pp.enriched, data);  // graphs pass through unchanged
      return;
    }
    ReaderModel m = load_reader_checkpoint(pp.reader_dir);
    save_dataset(pp.enriched, enrich_dataset(m, std::move(data)));
  });

  stage("pretrain-writer", [&] {
    auto data = load_dataset(pp.enriched);
    std::vector<WriterStepLog> steps;
    WriterModel m = pretrain_writer_stage(data, cfg, &steps);
    save_writer_checkpoint(pp.writer_dir, m, cfg);
    write_writer_log(pp.writer_log, steps);
  });

  stage("pretrain-reviewer", [&] {
    auto data = load_dataset(pp.enriched);
    WriterModel w = load_writer_checkpoint(pp.writer_dir);
    save_reviewer_checkpoint(pp.reviewer_dir,
                             pretrain_reviewer_stage(w, data, cfg), cfg);
  });

  stage("finetune", [&] {
    auto data = load_dataset(pp.enriched);
    WriterModel w = load_writer_checkpoint(pp.writer_dir);
    Reviewer rev = load_reviewer_checkpoint(pp.reviewer_dir);
    std::vector<FinetuneStepLog> steps;
    WriterModel tuned = finetune_stage(w, rev, data, cfg, opt.rewards, &steps);
    save_writer_checkpoint(pp.finetuned_dir, tuned, cfg);
    write_finetune_log(pp.finetune_log, steps);
  });

  stage("generate", [&] {
    auto data = load_dataset(pp.enriched);
    WriterModel m = load_writer_checkpoint(pp.finetuned_dir);
    write_generations(pp.generations, generate_stage(m, data, cfg));
  });

  stage("evaluate", [&] {
    auto data = load_dataset(pp.enriched);
    auto gens = load_generations(pp.generations);
    detail::write_text_file(pp.report, metric_report(gens, data, cfg).dump(2) + "\n");
  });

  res.report_path = pp.report;
  return res;
}

// ---------------------------------------------------------------------------
// Rating bundle: a seeded, shuffled, source-blinded sample for human studies,
// with the id mapping in a separate answer key.

struct RatingBundle {
  nlohmann::ordered_json items;  // [{"item": k, "text", "tokens"}]
  nlohmann::ordered_json key;    // [{"item": k, "id"}]
};

inline RatingBundle export_rating_bundle(
    const std::vector<GeneratedRecord>& gens, int n, std::uint64_t seed) {
  if (n < 1) throw UsageError("export: n must be >= 1");
  if (static_cast<size_t>(n) > gens.size())
    throw UsageError("export: asked for " + std::to_string(n) + " of " +
                     std::to_string(gens.size()) + " generations");
  std::vector<int> idx(gens.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  RatingBundle out;
  out.items = nlohmann::ordered_json::array();
  out.key = nlohmann::ordered_json::array();
  for (int i = 0; i < n; ++i) {
    const GeneratedRecord& g = gens[static_cast<size_t>(idx[i])];
    nlohmann::ordered_json item;
    item["item"] = i + 1;
    item["text"] = g.text;
    item["tokens"] = g.tokens;
    out.items.push_back(std::move(item));
    nlohmann::ordered_json k;
    k["item"] = i + 1;
    k["id"] = g.id;
    out.key.push_back(std::move(k));
  }
  return out;
}

}  // namespace scribe

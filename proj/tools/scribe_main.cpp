// Command-line front end. Subcommands cover the whole pipeline plus the
// individual stages; configuration resolves profile -> config file -> --seed
// -> --set overrides -> dedicated flags, and every checkpoint and report
// embeds the resolved result. Exit codes: 0 ok, 1 usage, 2 data, 3 training.

#include <deque>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scribe/checkpoint.hpp"
#include "scribe/config.hpp"
#include "scribe/dataset.hpp"
#include "scribe/magenda.hpp"
#include "scribe/pipeline.hpp"

namespace {

using scribe::PipelineConfig;

// Profile/config/--set/--seed block shared by the model-building commands.
struct ConfigArgs {
  std::string profile;
  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  // Dedicated flags bound to config keys; applied last, strings reuse the
  // config parser so validation lives in one place.
  std::deque<std::string> values;
  std::vector<std::pair<CLI::Option*, std::pair<std::string, std::string*>>>
      bound;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--profile", profile, "Built-in profile (micro|toy|full)");
    cmd->add_option("--config", config_file, "Flat key=value config file");
    cmd->add_option("--set", overrides,
                    "Override one config key=value (repeatable)");
    seed_opt = cmd->add_option(
        "--seed", seed, "Master seed; re-derives every stage seed");
  }

  CLI::Option* bind(CLI::App* cmd, const std::string& flag,
                    const std::string& key, const std::string& desc) {
    values.emplace_back();
    CLI::Option* o = cmd->add_option(flag, values.back(), desc);
    bound.push_back({o, {key, &values.back()}});
    return o;
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!profile.empty())
      scribe::apply_profile(cfg, scribe::parse_profile(profile));
    if (!config_file.empty()) scribe::apply_config_file(cfg, config_file);
    if (seed_opt && seed_opt->count()) scribe::apply_master_seed(cfg, seed);
    for (const auto& kv : overrides) scribe::apply_override(cfg, kv);
    for (const auto& [opt, kv] : bound)
      if (opt->count()) scribe::set_config_key(cfg, kv.first, *kv.second);
    scribe::validate_pipeline_config(cfg);
    return cfg;
  }
};

void check_format(const std::string& format) {
  if (format != "normalized" && format != "agenda")
    throw scribe::UsageError("unknown format '" + format +
                             "' (normalized|agenda)");
}

std::vector<scribe::DocumentInstance> load_any(const std::string& path,
                                               const std::string& format) {
  check_format(format);
  return format == "agenda" ? scribe::adapt_upstream_dataset(path)
                            : scribe::load_dataset(path);
}

// Accepted on commands whose behavior has no random component, so every
// subcommand exposes --seed.
void add_noop_seed(CLI::App* cmd) {
  auto sink = std::make_shared<std::uint64_t>();
  cmd->add_option("--seed", *sink,
                  "Accepted for interface uniformity; this command is "
                  "deterministic");
}

void add_prepare_data(CLI::App& app) {
  auto cmd = app.add_subcommand("prepare-data",
                                "Validate a dataset and write it normalized");
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto format = std::make_shared<std::string>("normalized");
  cmd->add_option("--in", *in, "Input JSONL")->required();
  cmd->add_option("--out", *out, "Output JSONL (normalized schema)")
      ->required();
  cmd->add_option("--format", *format, "Input format: normalized|agenda");
  add_noop_seed(cmd);
  cmd->callback([=] {
    auto data = load_any(*in, *format);
    if (data.empty()) throw scribe::DataError("dataset '" + *in + "' is empty");
    scribe::save_dataset(*out, data);
    std::cout << "wrote " << data.size() << " instances to " << *out << "\n";
  });
}

void add_build_magenda(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "build-magenda", "Merge each instance with its k nearest neighbors");
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto k = std::make_shared<int>(2);
  cmd->add_option("--in", *in, "Normalized dataset JSONL")->required();
  cmd->add_option("--out", *out, "Merged-instance JSONL")->required();
  cmd->add_option("--k", *k, "Neighbors merged into each instance");
  add_noop_seed(cmd);
  cmd->callback([=] {
    auto data = scribe::load_dataset(*in);
    auto merged = scribe::build_magenda(data, *k);
    std::string text;
    for (const auto& m : merged) {
      text += scribe::serialize_merged(m);
      text += '\n';
    }
    scribe::detail::write_text_file(*out, text);
    std::cout << "wrote " << merged.size() << " merged instances to " << *out
              << "\n";
  });
}

void add_train_reader(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "train-reader", "Pretrain embeddings and train the link predictor");
  auto a = std::make_shared<ConfigArgs>();
  auto data = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--data", *data, "Training dataset JSONL")->required();
  cmd->add_option("--out", *out, "Checkpoint directory")->required();
  a->add_common(cmd);
  a->bind(cmd, "--d", "reader.d", "Embedding width");
  a->bind(cmd, "--hops", "reader.hops", "Auxiliary-path horizon");
  a->bind(cmd, "--lr", "reader.lr", "Adam step size");
  a->bind(cmd, "--epochs", "reader.epochs", "Training epochs");
  cmd->callback([=] {
    PipelineConfig cfg = a->resolve();
    auto instances = scribe::load_dataset(*data);
    scribe::ReaderModel m = scribe::train_reader_on(instances, cfg);
    scribe::save_reader_checkpoint(*out, m, cfg);
    std::cout << "saved reader checkpoint to " << *out << "\n";
  });
}

void add_predict_links(CLI::App& app) {
  auto cmd = app.add_subcommand("predict-links",
                                "Enrich graphs with predicted relations");
  auto ckpt = std::make_shared<std::string>();
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--ckpt", *ckpt, "Reader checkpoint directory")->required();
  cmd->add_option("--in", *in, "Dataset JSONL")->required();
  cmd->add_option("--out", *out, "Enriched dataset JSONL")->required();
  add_noop_seed(cmd);
  cmd->callback([=] {
    scribe::ReaderModel m = scribe::load_reader_checkpoint(*ckpt);
    auto data = scribe::enrich_dataset(m, scribe::load_dataset(*in));
    scribe::save_dataset(*out, data);
    std::cout << "wrote " << data.size() << " enriched instances to " << *out
              << "\n";
  });
}

void add_eval_linkpred(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "eval-linkpred", "Rank held-out edges against corrupted candidates");
  auto ckpt = std::make_shared<std::string>();
  auto test = std::make_shared<std::string>();
  auto negatives = std::make_shared<int>(50);
  auto seed = std::make_shared<std::uint64_t>(0);
  cmd->add_option("--ckpt", *ckpt, "Reader checkpoint directory")->required();
  cmd->add_option("--test", *test, "Test dataset JSONL")->required();
  cmd->add_option("--negatives", *negatives, "Corruptions per side");
  cmd->add_option("--seed", *seed, "Corruption sampling seed");
  cmd->callback([=] {
    scribe::ReaderModel m = scribe::load_reader_checkpoint(*ckpt);
    auto data = scribe::load_dataset(*test);
    std::vector<std::pair<const scribe::KnowledgeGraph*,
                          std::vector<scribe::RelationEdge>>>
        tests;
    for (const auto& inst : data)
      if (!inst.graph.edges.empty() && inst.graph.N() >= 2)
        tests.emplace_back(&inst.graph, inst.graph.edges);
    if (tests.empty())
      throw scribe::DataError("no test graph has rankable edges");
    scribe::HitsReport rep =
        scribe::evaluate_hits(m, tests, *negatives, {1, 3, 10}, *seed);
    nlohmann::ordered_json j;
    for (const auto& [rank, frac] : rep.hits)
      j["hits@" + std::to_string(rank)] = frac;
    j["mean_rank"] = rep.mean_rank;
    j["n"] = rep.n;
    std::cout << j.dump(2) << "\n";
  });
}

void add_pretrain_writer(CLI::App& app) {
  auto cmd = app.add_subcommand("pretrain-writer",
                                "Supervised pretraining of the generator");
  auto a = std::make_shared<ConfigArgs>();
  auto data = std::make_shared<std::string>();
  auto dev = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto log_path = std::make_shared<std::string>();
  cmd->add_option("--data", *data, "Training dataset JSONL")->required();
  cmd->add_option("--dev", *dev, "Dev dataset JSONL for early stopping");
  cmd->add_option("--out", *out, "Checkpoint directory")->required();
  cmd->add_option("--log", *log_path, "Step log JSONL (default: <out>/train_log.jsonl)");
  a->add_common(cmd);
  a->bind(cmd, "--epochs", "writer.epochs", "Training epochs");
  a->bind(cmd, "--early-stop", "writer.early_stop", "dev-bleu|none");
  a->bind(cmd, "--batch-size", "writer.batch_size", "Instances per step");
  a->bind(cmd, "--max-length", "writer.max_length", "Decoder length cap");
  cmd->callback([=] {
    PipelineConfig cfg = a->resolve();
    auto instances = scribe::load_dataset(*data);
    std::vector<scribe::DocumentInstance> dev_data;
    if (!dev->empty()) dev_data = scribe::load_dataset(*dev);
    std::vector<scribe::WriterStepLog> steps;
    scribe::WriterModel m = scribe::pretrain_writer_stage(
        instances, cfg, &steps, dev->empty() ? nullptr : &dev_data);
    scribe::save_writer_checkpoint(*out, m, cfg);
    scribe::write_writer_log(
        log_path->empty() ? *out + "/train_log.jsonl" : *log_path, steps);
    std::cout << "saved writer checkpoint to " << *out << " (" << steps.size()
              << " steps)\n";
  });
}

void add_pretrain_reviewer(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "pretrain-reviewer",
      "Train the discriminator and the alignment scorer against a writer");
  auto a = std::make_shared<ConfigArgs>();
  auto writer = std::make_shared<std::string>();
  auto data = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--writer", *writer, "Pretrained writer checkpoint")
      ->required();
  cmd->add_option("--data", *data, "Training dataset JSONL")->required();
  cmd->add_option("--out", *out, "Reviewer checkpoint directory")->required();
  a->add_common(cmd);
  a->bind(cmd, "--disc-epochs", "disc.epochs", "Discriminator epochs");
  a->bind(cmd, "--align-epochs", "align.epochs", "Alignment epochs");
  cmd->callback([=] {
    PipelineConfig cfg = a->resolve();
    scribe::WriterModel w = scribe::load_writer_checkpoint(*writer);
    auto instances = scribe::load_dataset(*data);
    scribe::Reviewer rev = scribe::pretrain_reviewer_stage(w, instances, cfg);
    scribe::save_reviewer_checkpoint(*out, rev, cfg);
    std::cout << "saved reviewer checkpoint to " << *out << "\n";
  });
}

void add_finetune(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "finetune", "Policy-gradient fine-tuning against a frozen reviewer");
  auto a = std::make_shared<ConfigArgs>();
  auto writer = std::make_shared<std::string>();
  auto reviewer = std::make_shared<std::string>();
  auto data = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto log_path = std::make_shared<std::string>();
  auto rewards = std::make_shared<std::string>("all");
  cmd->add_option("--writer", *writer, "Pretrained writer checkpoint")
      ->required();
  cmd->add_option("--reviewer", *reviewer, "Reviewer checkpoint directory")
      ->required();
  cmd->add_option("--data", *data, "Training dataset JSONL")->required();
  cmd->add_option("--out", *out, "Output checkpoint directory")->required();
  cmd->add_option("--log", *log_path,
                  "Step log JSONL (default: <out>/finetune_log.jsonl)");
  cmd->add_option("--rewards", *rewards,
                  "Reward arm: quality|adversarial|alignment|all");
  a->add_common(cmd);
  a->bind(cmd, "--lambda-ar", "rl.lambda_ar", "Adversarial reward weight");
  a->bind(cmd, "--lambda-mr", "rl.lambda_mr", "Alignment reward weight");
  a->bind(cmd, "--lambda-rl", "rl.lambda_rl", "RL loss weight");
  a->bind(cmd, "--baseline", "rl.baseline", "batch-mean|none");
  a->bind(cmd, "--batch", "rl.batch", "Rollouts per update");
  a->bind(cmd, "--epochs", "finetune.epochs", "Fine-tuning epochs");
  a->bind(cmd, "--steps", "finetune.max_steps", "Step cap (0 = none)");
  cmd->callback([=] {
    PipelineConfig cfg = a->resolve();
    scribe::RewardArm arm = scribe::parse_reward_arm(*rewards);
    scribe::WriterModel w = scribe::load_writer_checkpoint(*writer);
    scribe::Reviewer rev = scribe::load_reviewer_checkpoint(*reviewer);
    auto instances = scribe::load_dataset(*data);
    std::vector<scribe::FinetuneStepLog> steps;
    scribe::WriterModel tuned =
        scribe::finetune_stage(w, rev, instances, cfg, arm, &steps);
    scribe::save_writer_checkpoint(*out, tuned, cfg);
    scribe::write_finetune_log(
        log_path->empty() ? *out + "/finetune_log.jsonl" : *log_path, steps);
    std::cout << "saved fine-tuned checkpoint to " << *out << " ("
              << steps.size() << " steps, rewards=" << *rewards << ")\n";
  });
}

void add_generate(CLI::App& app) {
  auto cmd = app.add_subcommand("generate",
                                "Decode paragraphs for a dataset's graphs");
  auto a = std::make_shared<ConfigArgs>();
  auto ckpt = std::make_shared<std::string>();
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--ckpt", *ckpt, "Writer checkpoint directory")->required();
  cmd->add_option("--in", *in, "Dataset JSONL")->required();
  cmd->add_option("--out", *out, "Generations JSONL")->required();
  a->add_common(cmd);
  a->bind(cmd, "--strategy", "generate.strategy",
          "greedy|sample|beam:<width>");
  a->bind(cmd, "--max-len", "generate.max_length",
          "Length cap (0 = writer's cap)");
  a->bind(cmd, "--temperature", "generate.temperature", "Sampling temperature");
  cmd->callback([=] {
    PipelineConfig cfg = a->resolve();
    if (a->seed_opt->count()) cfg.gen_seed = a->seed;
    scribe::WriterModel m = scribe::load_writer_checkpoint(*ckpt);
    auto instances = scribe::load_dataset(*in);
    auto recs = scribe::generate_stage(m, instances, cfg);
    scribe::write_generations(*out, recs);
    std::cout << "wrote " << recs.size() << " generations to " << *out << "\n";
  });
}

void add_evaluate(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "evaluate", "Score generations against reference abstracts");
  auto hyp = std::make_shared<std::string>();
  auto ref = std::make_shared<std::string>();
  auto metrics = std::make_shared<std::string>("bleu,cider");
  auto meteor_cmd = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("--hyp", *hyp, "Generations JSONL")->required();
  cmd->add_option("--ref", *ref, "Reference dataset JSONL")->required();
  cmd->add_option("--metrics", *metrics, "Comma list: bleu,cider[,meteor]");
  cmd->add_option("--meteor-cmd", *meteor_cmd,
                  "External scorer: <cmd> <hyp_file> <ref_file>");
  cmd->add_option("--out", *out, "Report path (default: stdout only)");
  add_noop_seed(cmd);
  cmd->callback([=] {
    PipelineConfig cfg;
    scribe::set_config_key(cfg, "eval.metrics", *metrics);
    scribe::set_config_key(cfg, "eval.meteor_cmd", *meteor_cmd);
    auto gens = scribe::load_generations(*hyp);
    auto refs = scribe::load_dataset(*ref);
    auto report = scribe::metric_report(gens, refs, cfg);
    std::cout << report.dump(2) << "\n";
    if (!out->empty())
      scribe::detail::write_text_file(*out, report.dump(2) + "\n");
  });
}

void add_export_bundle(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "export-bundle",
      "Sample a blinded rating bundle with a separate answer key");
  auto in = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto key = std::make_shared<std::string>();
  auto n = std::make_shared<int>(50);
  auto seed = std::make_shared<std::uint64_t>(0);
  cmd->add_option("--in", *in, "Generations JSONL")->required();
  cmd->add_option("--out", *out, "Bundle JSON")->required();
  cmd->add_option("--key", *key, "Answer-key JSON")->required();
  cmd->add_option("--n", *n, "Sample size");
  cmd->add_option("--seed", *seed, "Sampling seed");
  cmd->callback([=] {
    auto gens = scribe::load_generations(*in);
    scribe::RatingBundle b = scribe::export_rating_bundle(gens, *n, *seed);
    scribe::detail::write_text_file(*out, b.items.dump(2) + "\n");
    scribe::detail::write_text_file(*key, b.key.dump(2) + "\n");
    std::cout << "wrote " << *n << " blinded items to " << *out
              << " (key: " << *key << ")\n";
  });
}

void add_run_pipeline(CLI::App& app) {
  auto cmd = app.add_subcommand(
      "run-pipeline", "Run every stage end to end in a working directory");
  auto a = std::make_shared<ConfigArgs>();
  auto data = std::make_shared<std::string>();
  auto workdir = std::make_shared<std::string>();
  auto format = std::make_shared<std::string>("normalized");
  auto rewards = std::make_shared<std::string>("all");
  auto no_linkpred = std::make_shared<bool>(false);
  auto fresh = std::make_shared<bool>(false);
  cmd->add_option("--data", *data, "Input dataset JSONL")->required();
  cmd->add_option("--workdir", *workdir, "Working directory for artifacts")
      ->envname("SCRIBE_WORKDIR")
      ->required();
  cmd->add_option("--format", *format, "Input format: normalized|agenda");
  cmd->add_option("--rewards", *rewards,
                  "Reward arm: quality|adversarial|alignment|all");
  cmd->add_flag("--no-link-prediction", *no_linkpred,
                "Skip graph enrichment (ablation)");
  cmd->add_flag("--fresh", *fresh, "Ignore completion markers, rerun stages");
  a->add_common(cmd);
  cmd->callback([=] {
    PipelineConfig cfg = a->resolve();
    check_format(*format);
    scribe::PipelineOptions opt;
    opt.data_path = *data;
    opt.format = *format;
    opt.no_link_prediction = *no_linkpred;
    opt.rewards = scribe::parse_reward_arm(*rewards);
    opt.fresh = *fresh;
    scribe::PipelineResult res =
        scribe::run_pipeline(cfg, *workdir, opt, &std::cout);
    std::cout << "pipeline complete: " << res.stages_run.size()
              << " stages run, " << res.stages_skipped.size()
              << " resumed from checkpoints\nreport: " << res.report_path
              << "\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Knowledge-graph-grounded paragraph generation: reader (link "
      "prediction), writer (graph-to-text), reviewer (reward-guided "
      "fine-tuning)"};
  app.require_subcommand(1);
  add_prepare_data(app);
  add_build_magenda(app);
  add_train_reader(app);
  add_predict_links(app);
  add_eval_linkpred(app);
  add_pretrain_writer(app);
  add_pretrain_reviewer(app);
  add_finetune(app);
  add_generate(app);
  add_evaluate(app);
  add_export_bundle(app);
  add_run_pipeline(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const scribe::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const scribe::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const scribe::TrainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

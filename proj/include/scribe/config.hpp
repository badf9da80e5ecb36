#pragma once

// One flat key=value namespace covering every module's hyperparameters,
// three built-in profiles, config-file + override resolution, and front-
// loaded validation so a bad setting fails before any compute starts.

#include <cctype>
#include <climits>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scribe/common.hpp"
#include "scribe/embedding.hpp"
#include "scribe/reader.hpp"
#include "scribe/reviewer.hpp"
#include "scribe/writer.hpp"

namespace scribe {

enum class Profile { Micro, Toy, Full };

inline const char* profile_name(Profile p) {
  switch (p) {
    case Profile::Micro: return "micro";
    case Profile::Toy: return "toy";
    default: return "full";
  }
}

inline Profile parse_profile(const std::string& s) {
  if (s == "micro") return Profile::Micro;
  if (s == "toy") return Profile::Toy;
  if (s == "full") return Profile::Full;
  throw UsageError("unknown profile '" + s + "' (micro|toy|full)");
}

// Everything a run needs, resolved. Defaults are the full-scale settings;
// profiles overwrite the trainable-scale knobs.
struct PipelineConfig {
  Profile profile = Profile::Full;
  std::uint64_t seed = 0;  // master seed; setting it re-derives stage seeds

  int vocab_min_freq = 1;
  int vocab_max_size = 50000;
  int magenda_k = 2;

  TranseConfig transe;       // transe.d mirrors reader.d at use sites
  ReaderConfig reader;
  int linkpred_negatives = 50;

  WriterConfig writer;
  WriterTrainConfig writer_train;
  std::string early_stop = "dev-bleu";  // dev-bleu | none

  DiscConfig disc;
  DiscTrainConfig disc_train;
  AlignTrainConfig align_train;

  RLConfig rl;
  WriterTrainConfig finetune;  // batch_size unused: rl.batch is the minibatch

  std::string gen_strategy = "beam:2";  // greedy | sample | beam:<width>
  int gen_max_length = 0;               // 0 = writer.max_length
  double gen_temperature = 1.0;
  std::uint64_t gen_seed = 0;

  std::string metrics = "bleu,cider";
  std::string meteor_cmd;

  PipelineConfig() {
    finetune.epochs = 3;
    finetune.max_steps = 0;
  }
};

// ---------------------------------------------------------------------------
// Value parsing/formatting. Round-trip exact: doubles at max_digits10,
// integers as decimal.

namespace detail {

inline std::string trim_copy(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_double_value(const std::string& key, const std::string& v) {
  if (v.empty()) throw UsageError("config key '" + key + "': empty value");
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size())
    throw UsageError("config key '" + key + "': bad number '" + v + "'");
  return x;
}

inline long long parse_ll_value(const std::string& key, const std::string& v) {
  if (v.empty()) throw UsageError("config key '" + key + "': empty value");
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size())
    throw UsageError("config key '" + key + "': bad integer '" + v + "'");
  return x;
}

inline int parse_int_value(const std::string& key, const std::string& v) {
  long long x = parse_ll_value(key, v);
  if (x < INT_MIN || x > INT_MAX)
    throw UsageError("config key '" + key + "': integer out of range");
  return static_cast<int>(x);
}

inline std::uint64_t parse_u64_value(const std::string& key,
                                     const std::string& v) {
  if (v.empty()) throw UsageError("config key '" + key + "': empty value");
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v[0] == '-')
    throw UsageError("config key '" + key + "': bad unsigned '" + v + "'");
  return static_cast<std::uint64_t>(x);
}

inline bool parse_bool_value(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config key '" + key + "': bad bool '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key,
                                       const std::string& v) {
  std::vector<int> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ','))
    out.push_back(parse_int_value(key, trim_copy(cur)));
  if (out.empty()) throw UsageError("config key '" + key + "': empty list");
  return out;
}

inline std::string fmt_double(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

inline std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace detail

inline Baseline parse_baseline(const std::string& s) {
  if (s == "batch-mean") return Baseline::BatchMean;
  if (s == "none") return Baseline::None;
  throw UsageError("unknown baseline '" + s + "' (batch-mean|none)");
}

inline const char* baseline_name(Baseline b) {
  return b == Baseline::BatchMean ? "batch-mean" : "none";
}

// "greedy" | "sample" | "beam:<width>".
inline GenerationConfig parse_strategy(const std::string& s) {
  GenerationConfig gc;
  if (s == "greedy") {
    gc.strategy = DecodeStrategy::Greedy;
  } else if (s == "sample") {
    gc.strategy = DecodeStrategy::Sample;
  } else if (s.rfind("beam:", 0) == 0) {
    gc.strategy = DecodeStrategy::Beam;
    gc.beam_width = detail::parse_int_value("generate.strategy", s.substr(5));
    if (gc.beam_width < 1)
      throw UsageError("generate.strategy: beam width must be >= 1");
  } else {
    throw UsageError("unknown decode strategy '" + s +
                     "' (greedy|sample|beam:<width>)");
  }
  return gc;
}

// The master seed fans out so stages draw from unrelated streams.
inline void apply_master_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.transe.seed = seed;
  cfg.reader.seed = seed + 1;
  cfg.writer.seed = seed + 2;
  cfg.disc_train.seed = seed + 3;
  cfg.align_train.seed = seed + 4;
  cfg.rl.seed = seed + 5;
  cfg.gen_seed = seed + 6;
}

// ---------------------------------------------------------------------------
// Key dispatch. `seed` is a master key: setting it rewrites every stage seed,
// so stage-specific seed keys must come after it to win.

inline void set_config_key(PipelineConfig& cfg, const std::string& key,
                           const std::string& value) {
  using detail::parse_bool_value;
  using detail::parse_double_value;
  using detail::parse_int_list;
  using detail::parse_int_value;
  using detail::parse_u64_value;
  auto iv = [&] { return parse_int_value(key, value); };
  auto dv = [&] { return parse_double_value(key, value); };
  auto bv = [&] { return parse_bool_value(key, value); };
  auto uv = [&] { return parse_u64_value(key, value); };

  if (key == "profile") { cfg.profile = parse_profile(value); return; }
  if (key == "seed") { apply_master_seed(cfg, uv()); return; }

  if (key == "corpus.min_freq") { cfg.vocab_min_freq = iv(); return; }
  if (key == "corpus.max_size") { cfg.vocab_max_size = iv(); return; }
  if (key == "magenda.k") { cfg.magenda_k = iv(); return; }

  if (key == "transe.margin") { cfg.transe.margin = dv(); return; }
  if (key == "transe.lr") { cfg.transe.lr = dv(); return; }
  if (key == "transe.epochs") { cfg.transe.epochs = iv(); return; }
  if (key == "transe.normalize") { cfg.transe.normalize = bv(); return; }
  if (key == "transe.seed") { cfg.transe.seed = uv(); return; }

  if (key == "reader.d") { cfg.reader.d = iv(); return; }
  if (key == "reader.hops") { cfg.reader.hops = iv(); return; }
  if (key == "reader.filters") { cfg.reader.filters = iv(); return; }
  if (key == "reader.leaky_slope") { cfg.reader.leaky_slope = dv(); return; }
  if (key == "reader.lr") { cfg.reader.lr = dv(); return; }
  if (key == "reader.epochs") { cfg.reader.epochs = iv(); return; }
  if (key == "reader.seed") { cfg.reader.seed = uv(); return; }
  if (key == "reader.freeze_aux_sums") {
    cfg.reader.freeze_aux_sums = bv();
    return;
  }
  if (key == "reader.min_link_score") {
    cfg.reader.min_link_score = dv();
    return;
  }
  if (key == "reader.negatives") { cfg.linkpred_negatives = iv(); return; }

  if (key == "writer.d") { cfg.writer.d = iv(); return; }
  if (key == "writer.heads") { cfg.writer.heads = iv(); return; }
  if (key == "writer.global_layers") { cfg.writer.global_layers = iv(); return; }
  if (key == "writer.local_layers") { cfg.writer.local_layers = iv(); return; }
  if (key == "writer.decoder_layers") {
    cfg.writer.decoder_layers = iv();
    return;
  }
  if (key == "writer.ff") { cfg.writer.ff = iv(); return; }
  if (key == "writer.max_length") { cfg.writer.max_length = iv(); return; }
  if (key == "writer.reverse_edges") { cfg.writer.reverse_edges = bv(); return; }
  if (key == "writer.seed") { cfg.writer.seed = uv(); return; }
  if (key == "writer.epochs") { cfg.writer_train.epochs = iv(); return; }
  if (key == "writer.batch_size") { cfg.writer_train.batch_size = iv(); return; }
  if (key == "writer.base_lr") { cfg.writer_train.base_lr = dv(); return; }
  if (key == "writer.warmup") { cfg.writer_train.warmup = iv(); return; }
  if (key == "writer.patience") { cfg.writer_train.patience = iv(); return; }
  if (key == "writer.max_steps") {
    cfg.writer_train.max_steps = detail::parse_ll_value(key, value);
    return;
  }
  if (key == "writer.early_stop") {
    if (value != "dev-bleu" && value != "none")
      throw UsageError("writer.early_stop: expected dev-bleu|none");
    cfg.early_stop = value;
    return;
  }

  if (key == "disc.d") { cfg.disc.d = iv(); return; }
  if (key == "disc.windows") { cfg.disc.windows = parse_int_list(key, value); return; }
  if (key == "disc.filters") { cfg.disc.filters = iv(); return; }
  if (key == "disc.lr") { cfg.disc_train.lr = dv(); return; }
  if (key == "disc.epochs") { cfg.disc_train.epochs = iv(); return; }
  if (key == "disc.seed") { cfg.disc_train.seed = uv(); return; }

  if (key == "align.batch") { cfg.align_train.batch = iv(); return; }
  if (key == "align.epochs") { cfg.align_train.epochs = iv(); return; }
  if (key == "align.lr") { cfg.align_train.lr = dv(); return; }
  if (key == "align.seed") { cfg.align_train.seed = uv(); return; }

  if (key == "rl.lambda_q") { cfg.rl.lambda_q = dv(); return; }
  if (key == "rl.lambda_ar") { cfg.rl.lambda_ar = dv(); return; }
  if (key == "rl.lambda_mr") { cfg.rl.lambda_mr = dv(); return; }
  if (key == "rl.lambda_rl") { cfg.rl.lambda_rl = dv(); return; }
  if (key == "rl.batch") { cfg.rl.batch = iv(); return; }
  if (key == "rl.baseline") { cfg.rl.baseline = parse_baseline(value); return; }
  if (key == "rl.temperature") { cfg.rl.temperature = dv(); return; }
  if (key == "rl.disc_refresh_every") {
    cfg.rl.disc_refresh_every = iv();
    return;
  }
  if (key == "rl.disc_refresh_lr") { cfg.rl.disc_refresh_lr = dv(); return; }
  if (key == "rl.seed") { cfg.rl.seed = uv(); return; }

  if (key == "finetune.epochs") { cfg.finetune.epochs = iv(); return; }
  if (key == "finetune.base_lr") { cfg.finetune.base_lr = dv(); return; }
  if (key == "finetune.warmup") { cfg.finetune.warmup = iv(); return; }
  if (key == "finetune.max_steps") {
    cfg.finetune.max_steps = detail::parse_ll_value(key, value);
    return;
  }

  if (key == "generate.strategy") {
    parse_strategy(value);  // reject bad values at set time
    cfg.gen_strategy = value;
    return;
  }
  if (key == "generate.max_length") { cfg.gen_max_length = iv(); return; }
  if (key == "generate.temperature") { cfg.gen_temperature = dv(); return; }
  if (key == "generate.seed") { cfg.gen_seed = uv(); return; }

  if (key == "eval.metrics") { cfg.metrics = value; return; }
  if (key == "eval.meteor_cmd") { cfg.meteor_cmd = value; return; }

  throw UsageError("unknown config key '" + key + "'");
}

// Full resolved dump, master `seed` first so replaying the dump through
// set_config_key reproduces the exact configuration.
inline std::vector<std::pair<std::string, std::string>> resolved_kv(
    const PipelineConfig& cfg) {
  using detail::fmt_double;
  using detail::fmt_int_list;
  std::vector<std::pair<std::string, std::string>> kv;
  auto put = [&](const char* k, std::string v) { kv.emplace_back(k, std::move(v)); };
  put("profile", profile_name(cfg.profile));
  put("seed", std::to_string(cfg.seed));
  put("corpus.min_freq", std::to_string(cfg.vocab_min_freq));
  put("corpus.max_size", std::to_string(cfg.vocab_max_size));
  put("magenda.k", std::to_string(cfg.magenda_k));
  put("transe.margin", fmt_double(cfg.transe.margin));
  put("transe.lr", fmt_double(cfg.transe.lr));
  put("transe.epochs", std::to_string(cfg.transe.epochs));
  put("transe.normalize", cfg.transe.normalize ? "true" : "false");
  put("transe.seed", std::to_string(cfg.transe.seed));
  put("reader.d", std::to_string(cfg.reader.d));
  put("reader.hops", std::to_string(cfg.reader.hops));
  put("reader.filters", std::to_string(cfg.reader.filters));
  put("reader.leaky_slope", fmt_double(cfg.reader.leaky_slope));
  put("reader.lr", fmt_double(cfg.reader.lr));
  put("reader.epochs", std::to_string(cfg.reader.epochs));
  put("reader.seed", std::to_string(cfg.reader.seed));
  put("reader.freeze_aux_sums", cfg.reader.freeze_aux_sums ? "true" : "false");
  put("reader.min_link_score", fmt_double(cfg.reader.min_link_score));
  put("reader.negatives", std::to_string(cfg.linkpred_negatives));
  put("writer.d", std::to_string(cfg.writer.d));
  put("writer.heads", std::to_string(cfg.writer.heads));
  put("writer.global_layers", std::to_string(cfg.writer.global_layers));
  put("writer.local_layers", std::to_string(cfg.writer.local_layers));
  put("writer.decoder_layers", std::to_string(cfg.writer.decoder_layers));
  put("writer.ff", std::to_string(cfg.writer.ff));
  put("writer.max_length", std::to_string(cfg.writer.max_length));
  put("writer.reverse_edges", cfg.writer.reverse_edges ? "true" : "false");
  put("writer.seed", std::to_string(cfg.writer.seed));
  put("writer.epochs", std::to_string(cfg.writer_train.epochs));
  put("writer.batch_size", std::to_string(cfg.writer_train.batch_size));
  put("writer.base_lr", fmt_double(cfg.writer_train.base_lr));
  put("writer.warmup", std::to_string(cfg.writer_train.warmup));
  put("writer.patience", std::to_string(cfg.writer_train.patience));
  put("writer.max_steps", std::to_string(cfg.writer_train.max_steps));
  put("writer.early_stop", cfg.early_stop);
  put("disc.d", std::to_string(cfg.disc.d));
  put("disc.windows", fmt_int_list(cfg.disc.windows));
  put("disc.filters", std::to_string(cfg.disc.filters));
  put("disc.lr", fmt_double(cfg.disc_train.lr));
  put("disc.epochs", std::to_string(cfg.disc_train.epochs));
  put("disc.seed", std::to_string(cfg.disc_train.seed));
  put("align.batch", std::to_string(cfg.align_train.batch));
  put("align.epochs", std::to_string(cfg.align_train.epochs));
  put("align.lr", fmt_double(cfg.align_train.lr));
  put("align.seed", std::to_string(cfg.align_train.seed));
  put("rl.lambda_q", fmt_double(cfg.rl.lambda_q));
  put("rl.lambda_ar", fmt_double(cfg.rl.lambda_ar));
  put("rl.lambda_mr", fmt_double(cfg.rl.lambda_mr));
  put("rl.lambda_rl", fmt_double(cfg.rl.lambda_rl));
  put("rl.batch", std::to_string(cfg.rl.batch));
  put("rl.baseline", baseline_name(cfg.rl.baseline));
  put("rl.temperature", fmt_double(cfg.rl.temperature));
  put("rl.disc_refresh_every", std::to_string(cfg.rl.disc_refresh_every));
  put("rl.disc_refresh_lr", fmt_double(cfg.rl.disc_refresh_lr));
  put("rl.seed", std::to_string(cfg.rl.seed));
  put("finetune.epochs", std::to_string(cfg.finetune.epochs));
  put("finetune.base_lr", fmt_double(cfg.finetune.base_lr));
  put("finetune.warmup", std::to_string(cfg.finetune.warmup));
  put("finetune.max_steps", std::to_string(cfg.finetune.max_steps));
  put("generate.strategy", cfg.gen_strategy);
  put("generate.max_length", std::to_string(cfg.gen_max_length));
  put("generate.temperature", fmt_double(cfg.gen_temperature));
  put("generate.seed", std::to_string(cfg.gen_seed));
  put("eval.metrics", cfg.metrics);
  put("eval.meteor_cmd", cfg.meteor_cmd);
  return kv;
}

// ---------------------------------------------------------------------------
// Profiles. Full keeps the paper-scale defaults; toy fits acceptance runs;
// micro exists to smoke the whole pipeline in seconds.

inline void apply_profile(PipelineConfig& cfg, Profile p) {
  cfg.profile = p;
  if (p == Profile::Full) return;
  if (p == Profile::Toy) {
    cfg.transe.epochs = 50;
    cfg.transe.lr = 0.05;
    cfg.reader.d = 8;
    cfg.reader.filters = 8;
    cfg.reader.epochs = 30;
    cfg.reader.lr = 0.05;
    cfg.linkpred_negatives = 20;
    cfg.writer = WriterConfig{16, 2, 1, 1, 1, 32, 64, true, cfg.writer.seed};
    cfg.writer_train.epochs = 6;
    cfg.writer_train.batch_size = 5;
    cfg.writer_train.base_lr = 1.0;
    cfg.writer_train.warmup = 50;
    cfg.disc = DiscConfig{8, {2, 3}, 4};
    cfg.disc_train.epochs = 40;
    cfg.align_train.batch = 4;
    cfg.align_train.epochs = 5;
    cfg.align_train.lr = 0.01;
    cfg.rl.batch = 6;
    cfg.rl.temperature = 0.8;
    cfg.finetune.epochs = 2;
    cfg.finetune.base_lr = 0.5;
    cfg.finetune.warmup = 50;
    cfg.finetune.max_steps = 40;
    cfg.gen_strategy = "greedy";
    cfg.vocab_max_size = 5000;
    return;
  }
  // micro
  cfg.transe.epochs = 5;
  cfg.transe.lr = 0.05;
  cfg.reader.d = 4;
  cfg.reader.filters = 4;
  cfg.reader.epochs = 3;
  cfg.reader.lr = 0.05;
  cfg.linkpred_negatives = 5;
  cfg.writer = WriterConfig{8, 1, 1, 1, 1, 16, 32, true, cfg.writer.seed};
  cfg.writer_train.epochs = 2;
  cfg.writer_train.batch_size = 5;
  cfg.writer_train.base_lr = 0.5;
  cfg.writer_train.warmup = 10;
  cfg.disc = DiscConfig{4, {2}, 2};
  cfg.disc_train.epochs = 1;
  cfg.align_train.batch = 2;
  cfg.align_train.epochs = 1;
  cfg.align_train.lr = 0.01;
  cfg.rl.batch = 2;
  cfg.finetune.epochs = 1;
  cfg.finetune.warmup = 10;
  cfg.finetune.max_steps = 3;
  cfg.gen_strategy = "greedy";
  cfg.vocab_max_size = 2000;
}

// ---------------------------------------------------------------------------
// Config files: flat key=value lines, '#' comments, blank lines ignored.

inline void apply_config_text(PipelineConfig& cfg, const std::string& text,
                              const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim_copy(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(origin + ":" + std::to_string(line_no) +
                       ": expected key=value, got '" + t + "'");
    set_config_key(cfg, detail::trim_copy(t.substr(0, eq)),
                   detail::trim_copy(t.substr(eq + 1)));
  }
}

inline void apply_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str(), path);
}

// One "key=value" CLI override.
inline void apply_override(PipelineConfig& cfg, const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw UsageError("--set expects key=value, got '" + kv + "'");
  set_config_key(cfg, detail::trim_copy(kv.substr(0, eq)),
                 detail::trim_copy(kv.substr(eq + 1)));
}

inline std::string config_file_text(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : resolved_kv(cfg)) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> parse_metric_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(csv);
  while (std::getline(in, cur, ',')) {
    std::string m = detail::trim_copy(cur);
    if (m != "bleu" && m != "cider" && m != "meteor")
      throw UsageError("unknown metric '" + m + "' (bleu|cider|meteor)");
    for (const auto& seen : out)
      if (seen == m) throw UsageError("metric '" + m + "' listed twice");
    out.push_back(m);
  }
  if (out.empty()) throw UsageError("eval.metrics: empty metric list");
  return out;
}

// Rejects any setting a module would reject, before compute starts.
inline void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.vocab_min_freq < 1)
    throw UsageError("corpus.min_freq must be >= 1");
  if (cfg.vocab_max_size <= 4) throw UsageError("corpus.max_size must be > 4");
  if (cfg.magenda_k < 1) throw UsageError("magenda.k must be >= 1");

  if (cfg.transe.margin <= 0) throw UsageError("transe.margin must be positive");
  if (cfg.transe.lr <= 0) throw UsageError("transe.lr must be positive");
  if (cfg.transe.epochs < 0) throw UsageError("transe.epochs must be >= 0");

  if (cfg.reader.d < 1) throw UsageError("reader.d must be >= 1");
  if (cfg.reader.hops < 1) throw UsageError("reader.hops must be >= 1");
  if (cfg.reader.filters < 1) throw UsageError("reader.filters must be >= 1");
  if (cfg.reader.lr <= 0) throw UsageError("reader.lr must be positive");
  if (cfg.reader.epochs < 0) throw UsageError("reader.epochs must be >= 0");
  if (cfg.linkpred_negatives < 1)
    throw UsageError("reader.negatives must be >= 1");

  validate_writer_config(cfg.writer);
  if (cfg.writer_train.epochs < 0) throw UsageError("writer.epochs must be >= 0");
  if (cfg.writer_train.batch_size < 1)
    throw UsageError("writer.batch_size must be >= 1");
  if (cfg.writer_train.base_lr <= 0)
    throw UsageError("writer.base_lr must be positive");
  if (cfg.writer_train.warmup < 1) throw UsageError("writer.warmup must be >= 1");
  if (cfg.writer_train.patience < 1)
    throw UsageError("writer.patience must be >= 1");
  if (cfg.writer_train.max_steps < 0)
    throw UsageError("writer.max_steps must be >= 0");

  validate_disc_config(cfg.disc);
  if (cfg.disc_train.lr <= 0) throw UsageError("disc.lr must be positive");
  if (cfg.disc_train.epochs < 0) throw UsageError("disc.epochs must be >= 0");

  if (cfg.align_train.batch < 2) throw UsageError("align.batch must be >= 2");
  if (cfg.align_train.epochs < 0) throw UsageError("align.epochs must be >= 0");
  if (cfg.align_train.lr <= 0) throw UsageError("align.lr must be positive");

  validate_rl_config(cfg.rl);
  if (cfg.finetune.epochs < 0) throw UsageError("finetune.epochs must be >= 0");
  if (cfg.finetune.base_lr <= 0)
    throw UsageError("finetune.base_lr must be positive");
  if (cfg.finetune.warmup < 1) throw UsageError("finetune.warmup must be >= 1");
  if (cfg.finetune.max_steps < 0)
    throw UsageError("finetune.max_steps must be >= 0");

  GenerationConfig gc = parse_strategy(cfg.gen_strategy);
  (void)gc;
  if (cfg.gen_max_length < 0)
    throw UsageError("generate.max_length must be >= 0");
  if (cfg.gen_temperature <= 0)
    throw UsageError("generate.temperature must be positive");

  parse_metric_list(cfg.metrics);
}

}  // namespace scribe

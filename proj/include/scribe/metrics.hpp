#pragma once

// Reference-quality metrics over pre-tokenized text: corpus/sentence BLEU,
// CIDEr, and an external-scorer hook (subprocess contract). All scoring is
// whitespace-token based; nothing here re-tokenizes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "json.hpp"
#include "scribe/common.hpp"

namespace scribe {

using TokenSeq = std::vector<std::string>;

namespace detail {

// n-gram -> count within one sequence.
inline std::map<std::vector<std::string>, long> ngram_counts(
    const TokenSeq& s, int n) {
  std::map<std::vector<std::string>, long> out;
  if (static_cast<int>(s.size()) < n) return out;
  for (size_t p = 0; p + static_cast<size_t>(n) <= s.size(); ++p)
    ++out[std::vector<std::string>(s.begin() + static_cast<long>(p),
                                   s.begin() + static_cast<long>(p) + n)];
  return out;
}

inline long clipped_matches(
    const std::map<std::vector<std::string>, long>& hyp,
    const std::map<std::vector<std::string>, long>& ref) {
  long m = 0;
  for (const auto& [g, c] : hyp) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

// Brevity penalty: 1 when the hypothesis corpus is longer, exp(1 - r/c)
// otherwise; 0 for an empty hypothesis corpus.
inline double brevity_penalty(long c, long r) {
  if (c == 0) return 0.0;
  if (c > r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

}  // namespace detail

// Corpus BLEU (geometric mean of corpus-pooled modified n-gram precisions
// times the brevity penalty), scaled to [0, 100]. Any empty precision
// bucket zeroes the score.
inline double corpus_bleu(const std::vector<TokenSeq>& hyps,
                          const std::vector<TokenSeq>& refs, int max_n = 4) {
  if (hyps.size() != refs.size())
    throw UsageError("corpus_bleu: hypothesis/reference count mismatch");
  if (hyps.empty()) throw UsageError("corpus_bleu: empty corpus");
  if (max_n < 1) throw UsageError("corpus_bleu: max_n must be >= 1");
  long c = 0, r = 0;
  double log_p = 0.0;
  int orders = 0;  // n-gram orders at least one hypothesis is long enough for
  for (int n = 1; n <= max_n; ++n) {
    long match = 0, total = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
      auto h = detail::ngram_counts(hyps[i], n);
      auto g = detail::ngram_counts(refs[i], n);
      match += detail::clipped_matches(h, g);
      total += std::max<long>(
          0, static_cast<long>(hyps[i].size()) - static_cast<long>(n) + 1);
    }
    if (total == 0) continue;  // no hypothesis admits this order: skip it
    if (match == 0) return 0.0;
    ++orders;
    log_p += std::log(static_cast<double>(match) / static_cast<double>(total));
  }
  if (orders == 0) return 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    c += static_cast<long>(hyps[i].size());
    r += static_cast<long>(refs[i].size());
  }
  return 100.0 * detail::brevity_penalty(c, r) *
         std::exp(log_p / static_cast<double>(orders));
}

// Sentence BLEU in [0, 1] with add-one smoothing on every n-gram precision
// (so single-sentence scores are defined even with zero matches). An empty
// hypothesis scores 0 by definition.
inline double sentence_bleu(const TokenSeq& hyp, const TokenSeq& ref,
                            int max_n = 4) {
  if (ref.empty()) throw UsageError("sentence_bleu: empty reference");
  if (max_n < 1) throw UsageError("sentence_bleu: max_n must be >= 1");
  if (hyp.empty()) return 0.0;
  double log_p = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    auto h = detail::ngram_counts(hyp, n);
    auto g = detail::ngram_counts(ref, n);
    long match = detail::clipped_matches(h, g);
    long total = std::max<long>(
        0, static_cast<long>(hyp.size()) - static_cast<long>(n) + 1);
    log_p += std::log(static_cast<double>(match + 1) /
                      static_cast<double>(total + 1));
  }
  return detail::brevity_penalty(static_cast<long>(hyp.size()),
                                 static_cast<long>(ref.size())) *
         std::exp(log_p / static_cast<double>(max_n));
}

namespace detail {

// Per-instance CIDEr score (pre x10 scale): mean over n of the cosine
// between TF-IDF n-gram vectors, idf = ln(N / max(1, df)) with df counted
// over reference instances.
inline std::vector<double> cider_instances(const std::vector<TokenSeq>& hyps,
                                           const std::vector<TokenSeq>& refs,
                                           int max_n) {
  const size_t N = refs.size();
  std::vector<double> score(hyps.size(), 0.0);
  for (int n = 1; n <= max_n; ++n) {
    std::map<std::vector<std::string>, long> df;
    std::vector<std::map<std::vector<std::string>, long>> refc(N), hypc(N);
    for (size_t i = 0; i < N; ++i) {
      refc[i] = ngram_counts(refs[i], n);
      hypc[i] = ngram_counts(hyps[i], n);
      for (const auto& [g, c] : refc[i]) ++df[g];
    }
    auto idf = [&](const std::vector<std::string>& g) {
      auto it = df.find(g);
      long d = it == df.end() ? 0 : it->second;
      return std::log(static_cast<double>(N) /
                      static_cast<double>(std::max<long>(1, d)));
    };
    for (size_t i = 0; i < N; ++i) {
      double hh = 0.0, rr = 0.0, hr = 0.0;
      for (const auto& [g, c] : hypc[i]) {
        double w = static_cast<double>(c) * idf(g);
        hh += w * w;
        auto it = refc[i].find(g);
        if (it != refc[i].end())
          hr += w * static_cast<double>(it->second) * idf(g);
      }
      for (const auto& [g, c] : refc[i]) {
        double w = static_cast<double>(c) * idf(g);
        rr += w * w;
      }
      if (hh > 0.0 && rr > 0.0)
        score[i] += hr / (std::sqrt(hh) * std::sqrt(rr));
    }
  }
  for (double& s : score) s /= static_cast<double>(max_n);
  return score;
}

}  // namespace detail

// CIDEr: TF-IDF-weighted n-gram cosine (n = 1..4), averaged over n and
// instances, x10. Document frequencies come from the reference side, so a
// corpus of at least two instances is required.
inline double cider(const std::vector<TokenSeq>& hyps,
                    const std::vector<TokenSeq>& refs, int max_n = 4) {
  if (hyps.size() != refs.size())
    throw UsageError("cider: hypothesis/reference count mismatch");
  if (hyps.size() < 2)
    throw UsageError("cider: needs a corpus of >= 2 instances");
  std::vector<double> s = detail::cider_instances(hyps, refs, max_n);
  double mean = 0.0;
  for (double x : s) mean += x;
  return 10.0 * mean / static_cast<double>(s.size());
}

namespace detail {

inline std::string write_lines_tempfile(const std::vector<TokenSeq>& seqs,
                                        const std::string& tag) {
  std::string tmpl = "/tmp/scribe_" + tag + "_XXXXXX";
  std::vector<char> buf(tmpl.begin(), tmpl.end());
  buf.push_back('\0');
  int fd = mkstemp(buf.data());
  if (fd < 0) throw DataError("metrics: cannot create temp file");
  std::string path(buf.data());
  std::string text;
  for (const TokenSeq& s : seqs) {
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) text += ' ';
      text += s[i];
    }
    text += '\n';
  }
  ssize_t n = write(fd, text.data(), text.size());
  close(fd);
  if (n != static_cast<ssize_t>(text.size()))
    throw DataError("metrics: short write to temp file");
  return path;
}

}  // namespace detail

// External-scorer hook. The command is run as
//   <cmd> <hyp_file> <ref_file>
// where each file holds one space-joined token sequence per line. The score
// is the LAST whitespace-separated token of the combined output that parses
// fully as a number (tolerates banners like "Final score: 24.03"). An empty
// command means "not configured" -> nullopt; a nonzero exit or unparseable
// output is an error carrying the captured diagnostics.
inline std::optional<double> external_metric(const std::vector<TokenSeq>& hyps,
                                             const std::vector<TokenSeq>& refs,
                                             const std::string& cmd) {
  if (cmd.empty()) return std::nullopt;
  if (hyps.size() != refs.size())
    throw UsageError("external metric: hypothesis/reference count mismatch");
  std::string hyp_path = detail::write_lines_tempfile(hyps, "hyp");
  std::string ref_path = detail::write_lines_tempfile(refs, "ref");
  std::string full = cmd + " " + hyp_path + " " + ref_path + " 2>&1";
  FILE* pipe = popen(full.c_str(), "r");
  if (!pipe) {
    unlink(hyp_path.c_str());
    unlink(ref_path.c_str());
    throw DataError("external metric: cannot spawn scorer");
  }
  std::string out;
  char chunk[4096];
  size_t got;
  while ((got = fread(chunk, 1, sizeof chunk, pipe)) > 0) out.append(chunk, got);
  int status = pclose(pipe);
  unlink(hyp_path.c_str());
  unlink(ref_path.c_str());
  if (status != 0)
    throw UsageError("external metric: scorer failed (status " +
                     std::to_string(status) + "): " + out);
  std::istringstream iss(out);
  std::string tok;
  std::optional<double> best;
  while (iss >> tok) {
    try {
      size_t used = 0;
      double v = std::stod(tok, &used);
      if (used == tok.size()) best = v;
    } catch (const std::exception&) {
    }
  }
  if (!best)
    throw UsageError("external metric: no numeric score in output: " + out);
  return best;
}

inline std::optional<double> meteor(const std::vector<TokenSeq>& hyps,
                                    const std::vector<TokenSeq>& refs,
                                    const std::string& cmd) {
  return external_metric(hyps, refs, cmd);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  double bleu = 0.0;
  double cider = 0.0;
  std::optional<double> meteor;          // absent when no scorer configured
  std::vector<double> sentence_bleus;    // per instance, [0,1]
  std::vector<double> cider_instances;   // per instance, pre x10 scale

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["bleu"] = bleu;
    j["cider"] = cider;
    if (meteor) j["meteor"] = *meteor;
    j["per_instance"] = nlohmann::ordered_json::array();
    for (size_t i = 0; i < sentence_bleus.size(); ++i) {
      nlohmann::ordered_json row;
      row["sentence_bleu"] = sentence_bleus[i];
      row["cider"] = i < cider_instances.size() ? cider_instances[i] : 0.0;
      j["per_instance"].push_back(row);
    }
    return j.dump(2);
  }
};

inline MetricReport evaluate_metrics(const std::vector<TokenSeq>& hyps,
                                     const std::vector<TokenSeq>& refs,
                                     const std::string& meteor_cmd = "") {
  MetricReport rep;
  rep.bleu = corpus_bleu(hyps, refs);
  rep.cider = cider(hyps, refs);
  rep.meteor = meteor(hyps, refs, meteor_cmd);
  rep.sentence_bleus.reserve(hyps.size());
  for (size_t i = 0; i < hyps.size(); ++i)
    rep.sentence_bleus.push_back(sentence_bleu(hyps[i], refs[i]));
  rep.cider_instances = detail::cider_instances(hyps, refs, 4);
  return rep;
}

}  // namespace scribe

#pragma once

// Feedback rewards over generated paragraphs — quality (sentence BLEU),
// adversarial (text-CNN discriminator), alignment (attention + cosine
// against node states) — composed into a scalar reward and optimized with
// REINFORCE alongside the supervised loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "scribe/metrics.hpp"
#include "scribe/writer.hpp"

namespace scribe {

// ---------------------------------------------------------------------------
// Reward composition

struct RewardBreakdown {
  double r1 = 0.0;  // quality, [0,1]
  double r2 = 0.0;  // adversarial, (0,1)
  double r3 = 0.0;  // alignment, [-T,T]
  double total = 0.0;
};

// The weighted part is grouped as one term so that scaling both lambdas by
// a power of two scales (total - r1) exactly.
inline RewardBreakdown compose_reward(double r1, double r2, double r3,
                                      double lambda_ar, double lambda_mr) {
  return {r1, r2, r3, r1 + (lambda_ar * r2 + lambda_mr * r3)};
}

inline double total_loss(double loss_sl, double loss_rl, double lambda_rl) {
  return loss_sl + lambda_rl * loss_rl;
}

// ---------------------------------------------------------------------------
// Quality reward: smoothed sentence BLEU against the instance's reference.

inline double quality_reward(const TokenSeq& tau, const TokenSeq& reference) {
  return sentence_bleu(tau, reference);
}

// ---------------------------------------------------------------------------
// Adversarial reward: text-CNN discriminator.

struct DiscConfig {
  int d = 64;                          // token embedding width
  std::vector<int> windows = {3, 4, 5};
  int filters = 100;                   // per window
};

inline void validate_disc_config(const DiscConfig& cfg) {
  if (cfg.d < 1) throw UsageError("discriminator: d must be positive");
  if (cfg.filters < 1) throw UsageError("discriminator: filters must be positive");
  if (cfg.windows.empty()) throw UsageError("discriminator: no windows");
  for (int w : cfg.windows)
    if (w < 1) throw UsageError("discriminator: window must be positive");
}

template <class M>
struct DiscParamsT {
  M emb;                  // vocab x d
  std::vector<M> kernels; // per window: filters x (window*d)
  std::vector<M> kbias;   // per window: 1 x filters
  M fc_w;                 // 1 x (windows*filters)
  M fc_b;                 // 1 x 1
};
using DiscParams = DiscParamsT<Mat>;
using DiscVars = DiscParamsT<Var>;

template <class M>
DiscParamsT<M> shaped_disc(const DiscConfig& cfg) {
  DiscParamsT<M> p;
  p.kernels.resize(cfg.windows.size());
  p.kbias.resize(cfg.windows.size());
  return p;
}

template <class P, class F>
void visit_disc(P& p, F&& f) {
  f("disc.emb", p.emb);
  for (size_t i = 0; i < p.kernels.size(); ++i) {
    f("disc.k" + std::to_string(i), p.kernels[i]);
    f("disc.kb" + std::to_string(i), p.kbias[i]);
  }
  f("disc.fc_w", p.fc_w);
  f("disc.fc_b", p.fc_b);
}

struct Discriminator {
  DiscConfig cfg;
  DiscParams params;
};

inline Discriminator init_discriminator(const DiscConfig& cfg, int vocab_size,
                                        Rng& rng) {
  validate_disc_config(cfg);
  if (vocab_size < 4) throw UsageError("discriminator: vocabulary too small");
  Discriminator d{cfg, shaped_disc<Mat>(cfg)};
  d.params.emb =
      Mat::randn(vocab_size, cfg.d, rng, 1.0 / std::sqrt(double(cfg.d)));
  for (size_t i = 0; i < cfg.windows.size(); ++i) {
    d.params.kernels[i] =
        Mat::glorot(cfg.filters, cfg.windows[i] * cfg.d, rng);
    d.params.kbias[i] = Mat::zeros(1, cfg.filters);
  }
  d.params.fc_w = Mat::glorot(
      1, static_cast<int>(cfg.windows.size()) * cfg.filters, rng);
  d.params.fc_b = Mat::zeros(1, 1);
  return d;
}

inline void push_disc_params(ParamStore& ps, const DiscParams& p) {
  visit_disc(p, [&ps](const std::string& n, const Mat& m) { ps.add(n, m); });
}

inline void pull_disc_params(const ParamStore& ps, DiscParams& p) {
  visit_disc(p, [&ps](const std::string& n, Mat& m) { m = ps.find(n)->value; });
}

inline DiscVars bind_disc(Binder& bind, ParamStore& ps, const DiscConfig& cfg) {
  DiscVars v = shaped_disc<Var>(cfg);
  visit_disc(v, [&](const std::string& n, Var& var) { var = bind(*ps.find(n)); });
  return v;
}

inline DiscVars leaf_disc(Tape& tape, const DiscParams& p) {
  std::vector<const Mat*> mats;
  visit_disc(p, [&mats](const std::string&, const Mat& m) { mats.push_back(&m); });
  DiscVars v;
  v.kernels.resize(p.kernels.size());
  v.kbias.resize(p.kbias.size());
  size_t k = 0;
  visit_disc(v, [&](const std::string&, Var& var) { var = tape.leaf(*mats[k++]); });
  return v;
}

// Pre-sigmoid discriminator score. A <pad>-only suffix is stripped before
// scoring and sequences shorter than a window are re-padded up to that
// window; max-pooling runs over fully-real window positions whenever any
// exist, so trailing padding can never change the output.
inline Var disc_logit_t(Tape& tape, const DiscVars& w,
                        const std::vector<int>& ids, const DiscConfig& cfg) {
  int max_w = *std::max_element(cfg.windows.begin(), cfg.windows.end());
  int real = static_cast<int>(ids.size());
  while (real > 0 && ids[static_cast<size_t>(real) - 1] == Vocabulary::kPad)
    --real;
  std::vector<int> padded(ids.begin(), ids.begin() + real);
  while (static_cast<int>(padded.size()) < max_w)
    padded.push_back(Vocabulary::kPad);
  Var X = gather_rows(w.emb, padded);
  std::vector<Var> pooled;
  for (size_t i = 0; i < cfg.windows.size(); ++i) {
    int win = cfg.windows[i];
    Var U = unfold_rows(X, win);  // positions x (win*d)
    int valid = std::max(1, real - win + 1);
    if (valid < U.rows()) U = slice_rows(U, 0, valid);
    Var F = relu(add_rowvec(matmul(U, transpose(w.kernels[i])), w.kbias[i]));
    pooled.push_back(col_max(F));
  }
  Var f = concat_cols(pooled);
  return add(matmul(f, transpose(w.fc_w)), w.fc_b);
}

// Probability that the paragraph is human-written, strictly inside (0,1)
// (the logit is bounded away from the float saturation region).
inline double adversarial_reward(const std::vector<int>& ids,
                                 const Discriminator& disc) {
  Tape tape;
  DiscVars w = leaf_disc(tape, disc.params);
  double logit = disc_logit_t(tape, w, ids, disc.cfg).scalar();
  logit = std::clamp(logit, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-logit));
}

struct DiscTrainConfig {
  double lr = 0.001;  // plain SGD
  int epochs = 10;
  std::uint64_t seed = 0;
};

// Binary cross-entropy training: real sequences are the positive class.
// Plain SGD, one example per step, order shuffled per epoch.
inline Discriminator pretrain_discriminator(
    const std::vector<std::vector<int>>& real,
    const std::vector<std::vector<int>>& fake, int vocab_size,
    const DiscConfig& cfg, const DiscTrainConfig& tc) {
  if (real.empty() || fake.empty())
    throw DataError("discriminator: empty corpus");
  Rng rng(tc.seed);
  Rng prng = rng.fork(0);
  Discriminator disc = init_discriminator(cfg, vocab_size, prng);
  ParamStore ps;
  push_disc_params(ps, disc.params);
  SgdOpt opt(tc.lr);
  const size_t n = real.size() + fake.size();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<int> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    Rng erng = rng.fork(1 + static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    for (int idx : order) {
      const bool is_real = idx < static_cast<int>(real.size());
      const std::vector<int>& ids =
          is_real ? real[static_cast<size_t>(idx)]
                  : fake[static_cast<size_t>(idx) - real.size()];
      ps.zero_grad();
      Tape tape;
      Binder bind(tape);
      DiscVars w = bind_disc(bind, ps, cfg);
      Var logit = disc_logit_t(tape, w, ids, cfg);
      // BCE via softplus keeps the loss finite for any logit.
      Var loss = is_real ? softplus(neg(logit)) : softplus(logit);
      tape.backward(loss);
      bind.collect();
      opt.step(ps);
    }
  }
  pull_disc_params(ps, disc.params);
  return disc;
}

inline double discriminator_accuracy(
    const Discriminator& disc, const std::vector<std::vector<int>>& real,
    const std::vector<std::vector<int>>& fake) {
  if (real.empty() && fake.empty())
    throw DataError("discriminator: nothing to score");
  long correct = 0;
  for (const auto& ids : real)
    if (adversarial_reward(ids, disc) > 0.5) ++correct;
  for (const auto& ids : fake)
    if (adversarial_reward(ids, disc) <= 0.5) ++correct;
  return static_cast<double>(correct) /
         static_cast<double>(real.size() + fake.size());
}

// ---------------------------------------------------------------------------
// Alignment reward: LSTM text encoder + attention over node states + cosine.

template <class M>
struct AlignParamsT {
  M emb;                              // vocab x d
  M Wi, Ui, Wf, Uf, Wo, Uo, Wg, Ug;   // d x d, right-multiplied
  M bi, bf, bo, bg;                   // 1 x d
  M Wq, Wk, Wv;                       // d x d
};
using AlignParams = AlignParamsT<Mat>;
using AlignVars = AlignParamsT<Var>;

template <class P, class F>
void visit_align(P& p, F&& f) {
  f("align.emb", p.emb);
  f("align.Wi", p.Wi);
  f("align.Ui", p.Ui);
  f("align.bi", p.bi);
  f("align.Wf", p.Wf);
  f("align.Uf", p.Uf);
  f("align.bf", p.bf);
  f("align.Wo", p.Wo);
  f("align.Uo", p.Uo);
  f("align.bo", p.bo);
  f("align.Wg", p.Wg);
  f("align.Ug", p.Ug);
  f("align.bg", p.bg);
  f("align.Wq", p.Wq);
  f("align.Wk", p.Wk);
  f("align.Wv", p.Wv);
}

// The graph side is the writer's own (frozen) encoder, so node states match
// the generator's view of the graph bit for bit.
struct AlignmentModel {
  WriterModel writer;
  AlignParams params;
};

inline AlignParams init_align_params(int d, int vocab_size, Rng& rng) {
  if (d < 1) throw UsageError("alignment: d must be positive");
  if (vocab_size < 4) throw UsageError("alignment: vocabulary too small");
  AlignParams p;
  p.emb = Mat::randn(vocab_size, d, rng, 1.0 / std::sqrt(double(d)));
  for (Mat* w : {&p.Wi, &p.Ui, &p.Wf, &p.Uf, &p.Wo, &p.Uo, &p.Wg, &p.Ug,
                 &p.Wq, &p.Wk, &p.Wv})
    *w = Mat::glorot(d, d, rng);
  for (Mat* b : {&p.bi, &p.bf, &p.bo, &p.bg}) *b = Mat::zeros(1, d);
  return p;
}

inline void push_align_params(ParamStore& ps, const AlignParams& p) {
  visit_align(p, [&ps](const std::string& n, const Mat& m) { ps.add(n, m); });
}

inline void pull_align_params(const ParamStore& ps, AlignParams& p) {
  visit_align(p, [&ps](const std::string& n, Mat& m) { m = ps.find(n)->value; });
}

inline AlignVars bind_align(Binder& bind, ParamStore& ps) {
  AlignVars v;
  visit_align(v, [&](const std::string& n, Var& var) { var = bind(*ps.find(n)); });
  return v;
}

inline AlignVars leaf_align(Tape& tape, const AlignParams& p) {
  std::vector<const Mat*> mats;
  visit_align(p, [&mats](const std::string&, const Mat& m) { mats.push_back(&m); });
  AlignVars v;
  size_t k = 0;
  visit_align(v, [&](const std::string&, Var& var) { var = tape.leaf(*mats[k++]); });
  return v;
}

// Single-layer LSTM over the token embeddings; returns the T x d matrix of
// hidden states c_t (the text representation C).
inline Var lstm_states_t(Tape& tape, const AlignVars& w,
                         const std::vector<int>& ids) {
  if (ids.empty()) throw UsageError("alignment: empty token sequence");
  const int d = w.Wi.cols();
  Var h = tape.leaf(Mat::zeros(1, d));
  Var c = tape.leaf(Mat::zeros(1, d));
  std::vector<Var> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    Var x = gather_rows(w.emb, {id});
    Var i = sigmoid(add(add(matmul(x, w.Wi), matmul(h, w.Ui)), w.bi));
    Var f = sigmoid(add(add(matmul(x, w.Wf), matmul(h, w.Uf)), w.bf));
    Var o = sigmoid(add(add(matmul(x, w.Wo), matmul(h, w.Uo)), w.bo));
    Var g = tanh(add(add(matmul(x, w.Wg), matmul(h, w.Ug)), w.bg));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    rows.push_back(h);
  }
  return concat_rows(rows);
}

// q_t = softmax((W_Q c_t)(W_K H)^T / sqrt(d)) W_V H, then sum of
// cos(q_t, c_t) over t. Zero-norm rows contribute 0.
inline Var alignment_reward_t(Tape& tape, const AlignVars& w, Var C, Var H) {
  const int d = C.cols();
  Var Q = matmul(C, w.Wq);
  Var K = matmul(H, w.Wk);
  Var V = matmul(H, w.Wv);
  Var A = softmax_rows(
      scale(matmul(Q, transpose(K)), 1.0 / std::sqrt(double(d))));
  Var Qt = matmul(A, V);
  return sum_all(cosine_rows(Qt, C));
}

inline double alignment_reward(const std::vector<int>& ids, const Mat& H,
                               const AlignParams& params) {
  if (H.rows < 1) throw UsageError("alignment: need at least one node");
  if (H.cols != params.Wq.rows)
    throw UsageError("alignment: node width does not match parameters");
  Tape tape;
  AlignVars w = leaf_align(tape, params);
  Var C = lstm_states_t(tape, w, ids);
  return alignment_reward_t(tape, w, C, tape.leaf(H)).scalar();
}

struct AlignTrainConfig {
  int batch = 4;  // contrastive batch; must be >= 2
  int epochs = 10;
  double lr = 0.001;  // Adam
  std::uint64_t seed = 0;
};

// In-batch contrastive pretraining: each text must score its own graph
// higher than the other graphs in the batch (softmax cross-entropy over the
// batch score matrix). The writer-side graph encoder stays frozen.
inline AlignmentModel pretrain_alignment(
    const std::vector<const DocumentInstance*>& data, const WriterModel& writer,
    const AlignTrainConfig& tc) {
  if (tc.batch < 2)
    throw UsageError("alignment: contrastive batch must be >= 2");
  std::vector<const DocumentInstance*> usable;
  for (const DocumentInstance* inst : data)
    if (inst->abstract && !inst->abstract->empty() &&
        !inst->graph.nodes.empty())
      usable.push_back(inst);
  if (usable.size() < 2)
    throw DataError("alignment: need at least two trainable instances");

  Rng rng(tc.seed);
  Rng prng = rng.fork(0);
  AlignmentModel m{writer, init_align_params(writer.cfg.d,
                                             writer.vocab.size(), prng)};
  // Frozen graph-side states, computed once.
  std::vector<Mat> hs;
  std::vector<std::vector<int>> texts;
  for (const DocumentInstance* inst : usable) {
    hs.push_back(encode_nodes(writer, inst->graph).H);
    texts.push_back(
        writer.vocab.encode(apply_placeholders(*inst->abstract, inst->graph)));
  }

  ParamStore ps;
  push_align_params(ps, m.params);
  AdamOpt opt(tc.lr);
  const size_t bs = static_cast<size_t>(tc.batch);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<int> order(usable.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng erng = rng.fork(1 + static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    for (size_t at = 0; at + 2 <= order.size(); at += bs) {
      const size_t b = std::min(bs, order.size() - at);
      if (b < 2) break;
      ps.zero_grad();
      Tape tape;
      Binder bind(tape);
      AlignVars w = bind_align(bind, ps);
      std::vector<Var> cs(b);
      std::vector<Var> hvar(b);
      for (size_t k = 0; k < b; ++k) {
        const size_t idx = static_cast<size_t>(order[at + k]);
        cs[k] = lstm_states_t(tape, w, texts[idx]);
        hvar[k] = tape.leaf(hs[idx]);
      }
      std::vector<Var> rows;
      for (size_t i = 0; i < b; ++i) {
        std::vector<Var> scores;
        for (size_t j = 0; j < b; ++j)
          scores.push_back(alignment_reward_t(tape, w, cs[i], hvar[j]));
        rows.push_back(concat_cols(scores));
      }
      Var S = concat_rows(rows);
      Var logp = log_softmax_rows(S);
      std::vector<int> diag(b);
      for (size_t i = 0; i < b; ++i) diag[i] = static_cast<int>(i);
      Var loss = scale(neg(sum_all(pick(logp, diag))), 1.0 / double(b));
      tape.backward(loss);
      bind.collect();
      opt.step(ps);
    }
  }
  pull_align_params(ps, m.params);
  return m;
}

// ---------------------------------------------------------------------------
// Policy gradient

enum class Baseline { None, BatchMean };

struct RLConfig {
  double lambda_q = 1.0;  // quality coefficient; 1 gives R = r1 + ...
  double lambda_ar = 2.0;
  double lambda_mr = 2.0;
  double lambda_rl = 1.0;
  int batch = 8;  // B: rollouts per update (and the fine-tuning minibatch)
  Baseline baseline = Baseline::BatchMean;  // variance reduction, flaggable
  double temperature = 1.0;                 // rollout sampling temperature
  int disc_refresh_every = 0;  // 0 = reviewer frozen during fine-tuning
  double disc_refresh_lr = 0.001;
  std::uint64_t seed = 0;
};

inline void validate_rl_config(const RLConfig& rl) {
  if (rl.lambda_q < 0 || rl.lambda_ar < 0 || rl.lambda_mr < 0 ||
      rl.lambda_rl < 0)
    throw UsageError("rl: lambdas must be non-negative");
  if (rl.batch < 1) throw UsageError("rl: batch must be >= 1");
  if (rl.temperature <= 0) throw UsageError("rl: temperature must be positive");
}

// L_RL = -(1/B) sum_b (R_b - baseline) * logP(tau_b).
inline double policy_gradient_loss(const std::vector<double>& logp,
                                   const std::vector<double>& rewards,
                                   Baseline baseline) {
  if (logp.empty()) throw UsageError("rl: empty batch");
  if (logp.size() != rewards.size())
    throw UsageError("rl: log-prob / reward count mismatch");
  double base = 0.0;
  if (baseline == Baseline::BatchMean) {
    for (double r : rewards) base += r;
    base /= static_cast<double>(rewards.size());
  }
  double s = 0.0;
  for (size_t b = 0; b < logp.size(); ++b)
    s += (rewards[b] - base) * logp[b];
  return -s / static_cast<double>(logp.size());
}

// Tape twin: rewards are constants, log-probs carry gradient.
inline Var policy_gradient_loss_t(const std::vector<Var>& logp,
                                  const std::vector<double>& rewards,
                                  Baseline baseline) {
  if (logp.empty()) throw UsageError("rl: empty batch");
  if (logp.size() != rewards.size())
    throw UsageError("rl: log-prob / reward count mismatch");
  double base = 0.0;
  if (baseline == Baseline::BatchMean) {
    for (double r : rewards) base += r;
    base /= static_cast<double>(rewards.size());
  }
  const double inv_b = 1.0 / static_cast<double>(logp.size());
  Var total;
  for (size_t b = 0; b < logp.size(); ++b) {
    Var term = scale(logp[b], -(rewards[b] - base) * inv_b);
    total = (b == 0) ? term : add(total, term);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Fine-tuning: L = L_SL + lambda_RL * L_RL on writer parameters.

struct Reviewer {
  Discriminator disc;
  AlignmentModel align;
};

struct FinetuneStepLog {
  long step = 0;
  double loss_sl = 0.0;
  double loss_rl = 0.0;
  double mean_R = 0.0;
  double mean_r1 = 0.0;
  double mean_r2 = 0.0;
  double mean_r3 = 0.0;
  double mean_r3_per_token = 0.0;  // r3/T, comparable across lengths
};

namespace detail {

inline void check_finetune_compat(const WriterModel& writer,
                                  const Reviewer& rev) {
  if (rev.align.writer.cfg.d != writer.cfg.d)
    throw UsageError("finetune: reviewer/writer d mismatch");
  if (rev.align.params.Wq.rows != writer.cfg.d)
    throw UsageError("finetune: alignment parameter width mismatch");
  if (rev.disc.params.emb.rows != writer.vocab.size())
    throw UsageError("finetune: discriminator vocabulary size mismatch");
  if (rev.align.params.emb.rows != writer.vocab.size())
    throw UsageError("finetune: alignment vocabulary size mismatch");
}

}  // namespace detail

// Per-sample reward for a rollout. tau_ids is the decoder-space sequence
// (placeholders intact, no <bos>/<eos>); tau_tokens is the restored surface
// text used for BLEU against the raw reference abstract. H is the node
// matrix from the alignment model's own (frozen) graph encoder.
inline RewardBreakdown score_rollout(const std::vector<int>& tau_ids,
                                     const TokenSeq& tau_tokens,
                                     const TokenSeq& reference, const Mat& H,
                                     const Reviewer& rev, const RLConfig& rl) {
  double r1 = rl.lambda_q * quality_reward(tau_tokens, reference);
  double r2 = adversarial_reward(tau_ids, rev.disc);
  double r3 = tau_ids.empty()
                  ? 0.0
                  : alignment_reward(tau_ids, H, rev.align.params);
  return compose_reward(r1, r2, r3, rl.lambda_ar, rl.lambda_mr);
}

// Alternating SL + RL fine-tuning of the writer. Reviewer parameters stay
// frozen unless disc_refresh_every > 0, in which case the discriminator
// takes one SGD pass over (reference, rollout) pairs every K steps.
//
// The minibatch size is rl.batch (B): every update draws one rollout per
// batch instance, so the supervised and policy halves see the same data.
// With lambda_rl == 0 no rollouts are sampled, no reward RNG is consumed,
// and the update sequence exactly reproduces supervised pretraining warm-
// started from `start` with batch_size = rl.batch.
inline WriterModel finetune(const WriterModel& start, const Reviewer& rev,
                            const std::vector<const DocumentInstance*>& data,
                            const RLConfig& rl, const WriterTrainConfig& tc,
                            std::vector<FinetuneStepLog>* log = nullptr,
                            std::vector<RewardBreakdown>* rewards_log = nullptr) {
  validate_writer_config(start.cfg);
  validate_rl_config(rl);
  detail::check_finetune_compat(start, rev);

  const WriterConfig& cfg = start.cfg;
  const Vocabulary& vocab = start.vocab;
  std::vector<const DocumentInstance*> usable;
  std::vector<std::vector<int>> targets;
  for (const DocumentInstance* inst : data) {
    if (!inst->abstract || inst->abstract->empty() || inst->graph.nodes.empty())
      continue;
    usable.push_back(inst);
    targets.push_back(writer_target(*inst, vocab, cfg.max_length));
  }
  if (usable.empty())
    throw DataError("finetune: no trainable instances (need abstract + graph)");

  // Same RNG scheme as supervised pretraining so the lambda_rl == 0 path is
  // step-for-step identical; rollout sampling draws from its own stream.
  Rng rng(cfg.seed);
  Rng rollrng(rl.seed);
  WriterParams params = start.params;
  ParamStore ps;
  push_writer_params(ps, params);
  AdamOpt opt(tc.base_lr);
  Reviewer cur = rev;  // local copy; mutated only by the optional refresh

  // Reward-side node states come from the frozen alignment writer.
  std::vector<Mat> reward_H;
  if (rl.lambda_rl > 0.0) {
    reward_H.reserve(usable.size());
    for (const DocumentInstance* inst : usable)
      reward_H.push_back(encode_nodes(cur.align.writer, inst->graph).H);
  }

  long step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
    std::vector<int> order(usable.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng erng = rng.fork(1 + static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    const size_t bs = static_cast<size_t>(rl.batch);
    for (size_t at = 0; at < order.size() && !stop; at += bs) {
      ++step;
      opt.set_lr(noam_lr(tc.base_lr, cfg.d, tc.warmup, step));
      ps.zero_grad();
      Tape tape;
      Binder bind(tape);
      WriterVars w = bind_writer(bind, ps, cfg);

      // Supervised half: identical construction to the pretraining loop.
      Var sl_total;
      long toks = 0;
      const size_t bend = std::min(order.size(), at + bs);
      for (size_t k = at; k < bend; ++k) {
        const size_t idx = static_cast<size_t>(order[k]);
        const std::vector<int>& y = targets[idx];
        std::vector<int> tgt(y.begin() + 1, y.end());
        NodeStagesT st = encode_nodes_t(tape, w, usable[idx]->graph, vocab, cfg);
        Var lp = decode_teacher_forced_t(tape, w, st.H, y, cfg);
        Var li = sl_loss_t(lp, tgt);
        sl_total = (toks == 0) ? li : add(sl_total, li);
        toks += static_cast<long>(tgt.size());
      }
      Var loss = scale(sl_total, 1.0 / static_cast<double>(toks));
      double loss_sl = loss.scalar();
      double loss_rl = 0.0;
      double sum_R = 0, sum_r1 = 0, sum_r2 = 0, sum_r3 = 0, sum_r3tok = 0;
      long nroll = 0;

      if (rl.lambda_rl > 0.0) {
        // Rollouts from the current policy, one per batch instance.
        WriterModel snap{cfg, params, vocab};
        pull_writer_params(ps, snap.params);
        Rng rrng = rollrng.fork(static_cast<std::uint64_t>(step));
        std::vector<Var> logps;
        std::vector<double> rewards;
        std::vector<std::vector<int>> rollout_ids;
        for (size_t k = at; k < bend; ++k) {
          const size_t idx = static_cast<size_t>(order[k]);
          const DocumentInstance* inst = usable[idx];
          GenerationConfig gc;
          gc.strategy = DecodeStrategy::Sample;
          gc.temperature = rl.temperature;
          // Leave room for the <eos> appended when the rollout is re-scored.
          gc.max_length = std::max(1, cfg.max_length - 1);
          gc.seed = rrng.next_u64();
          GeneratedParagraph out = generate(snap, inst->graph, gc);
          const bool emitted_eos = out.logprobs.size() == out.ids.size() + 1;
          RewardBreakdown rb =
              score_rollout(out.ids, out.tokens, *inst->abstract,
                            reward_H[idx], cur, rl);
          if (rewards_log) rewards_log->push_back(rb);
          sum_R += rb.total;
          sum_r1 += rb.r1;
          sum_r2 += rb.r2;
          sum_r3 += rb.r3;
          sum_r3tok += rb.r3 / static_cast<double>(std::max<size_t>(
                                   1, out.ids.size()));
          ++nroll;
          rollout_ids.push_back(out.ids);
          // Re-score the rollout under the parameters being optimized.
          std::vector<int> y;
          y.reserve(out.ids.size() + 2);
          y.push_back(Vocabulary::kBos);
          for (int id : out.ids) y.push_back(id);
          y.push_back(Vocabulary::kEos);
          std::vector<int> tgt(y.begin() + 1, y.end());
          NodeStagesT stv = encode_nodes_t(tape, w, inst->graph, vocab, cfg);
          Var lp = decode_teacher_forced_t(tape, w, stv.H, y, cfg);
          Var picked = pick(lp, tgt);
          // Without a sampled <eos> the final row scores a forced token the
          // policy never chose; keep the gradient to policy decisions only.
          if (!emitted_eos && picked.rows() > 1)
            picked = slice_rows(picked, 0, picked.rows() - 1);
          logps.push_back(sum_all(picked));
          rewards.push_back(rb.total);
        }
        Var lrl = policy_gradient_loss_t(logps, rewards, rl.baseline);
        loss_rl = lrl.scalar();
        loss = add(loss, scale(lrl, rl.lambda_rl));

        if (rl.disc_refresh_every > 0 && step % rl.disc_refresh_every == 0) {
          // SeqGAN-style refresh: one SGD pass on this batch's references
          // (real) versus rollouts (fake).
          ParamStore dps;
          push_disc_params(dps, cur.disc.params);
          SgdOpt dopt(rl.disc_refresh_lr);
          for (size_t k = at; k < bend; ++k) {
            const size_t idx = static_cast<size_t>(order[k]);
            std::vector<int> real_ids(targets[idx].begin() + 1,
                                      targets[idx].end() - 1);
            for (int pass = 0; pass < 2; ++pass) {
              const bool is_real = pass == 0;
              const std::vector<int>& ids =
                  is_real ? real_ids : rollout_ids[k - at];
              dps.zero_grad();
              Tape dt;
              Binder db(dt);
              DiscVars dw = bind_disc(db, dps, cur.disc.cfg);
              Var logit = disc_logit_t(dt, dw, ids, cur.disc.cfg);
              Var dloss = is_real ? softplus(neg(logit)) : softplus(logit);
              dt.backward(dloss);
              db.collect();
              dopt.step(dps);
            }
          }
          pull_disc_params(dps, cur.disc.params);
        }
      }

      tape.backward(loss);
      bind.collect();
      opt.step(ps);
      if (log) {
        double inv = nroll ? 1.0 / static_cast<double>(nroll) : 0.0;
        log->push_back({step, loss_sl, loss_rl, sum_R * inv, sum_r1 * inv,
                        sum_r2 * inv, sum_r3 * inv, sum_r3tok * inv});
      }
      if (tc.max_steps > 0 && step >= tc.max_steps) stop = true;
    }
  }
  WriterModel out{cfg, params, vocab};
  pull_writer_params(ps, out.params);
  return out;
}

}  // namespace scribe

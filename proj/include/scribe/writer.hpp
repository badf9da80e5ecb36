#pragma once

// Graph-to-text writer: node features from entity surfaces, a global
// transformer over the fully connected node set, relation-aware local
// attention merged through a GRU gate, and an autoregressive transformer
// decoder trained with token-level cross entropy.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "scribe/autograd.hpp"
#include "scribe/common.hpp"
#include "scribe/graph.hpp"
#include "scribe/mat.hpp"
#include "scribe/optim.hpp"
#include "scribe/rng.hpp"
#include "scribe/vocab.hpp"

namespace scribe {

// Local attention sees incoming edges plus (optionally) reversed copies of
// outgoing edges under distinct labels, so the relation table has a forward
// and a reverse row per label.
constexpr int kNumWriterRelations = 2 * kNumRelationLabels;

struct WriterConfig {
  int d = 256;
  int heads = 8;
  int global_layers = 6;
  int local_layers = 3;
  int decoder_layers = 6;
  int ff = 0;  // feed-forward width; 0 means 4*d
  int max_length = 430;
  bool reverse_edges = true;
  std::uint64_t seed = 0;
};

inline int writer_ff(const WriterConfig& cfg) {
  return cfg.ff > 0 ? cfg.ff : 4 * cfg.d;
}

inline void validate_writer_config(const WriterConfig& cfg) {
  if (cfg.d < 1) throw UsageError("writer: d must be >= 1");
  if (cfg.heads < 1) throw UsageError("writer: heads must be >= 1");
  if (cfg.d % cfg.heads != 0)
    throw UsageError("writer: head count must divide d");
  if (cfg.global_layers < 1 || cfg.local_layers < 1 ||
      cfg.decoder_layers < 1)
    throw UsageError("writer: layer counts must be >= 1");
  if (cfg.max_length < 1) throw UsageError("writer: max_length must be >= 1");
}

// Parameter blocks are templated on the matrix type so the same structure
// holds plain values (Mat) and tape handles (Var).
template <class M>
struct AttnBlockT {
  M Wq, Wk, Wv, Wo, bo, ln_g, ln_b;
};

template <class M>
struct FfBlockT {
  M W1, b1, W2, b2, ln_g, ln_b;
};

template <class M>
struct GlobalLayerT {
  AttnBlockT<M> attn;
  FfBlockT<M> ff;
};

template <class M>
struct LocalLayerT {
  std::vector<M> W3;  // one d x 2d score map per head
  M Wl, bl;           // head concat projection back to d
  M Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn;  // GRU merge cell
};

template <class M>
struct DecoderLayerT {
  AttnBlockT<M> self_attn, cross_attn;
  FfBlockT<M> ff;
};

template <class M>
struct WriterParamsT {
  M tok_emb, type_emb, rel_emb;
  std::vector<GlobalLayerT<M>> global;
  std::vector<LocalLayerT<M>> local;
  std::vector<DecoderLayerT<M>> dec;
  M out_w, out_b;
};

using WriterParams = WriterParamsT<Mat>;
using WriterVars = WriterParamsT<Var>;

template <class M>
WriterParamsT<M> shaped_writer(const WriterConfig& cfg) {
  WriterParamsT<M> p;
  p.global.resize(static_cast<size_t>(cfg.global_layers));
  p.local.resize(static_cast<size_t>(cfg.local_layers));
  for (auto& l : p.local) l.W3.resize(static_cast<size_t>(cfg.heads));
  p.dec.resize(static_cast<size_t>(cfg.decoder_layers));
  return p;
}

// Enumerates every tensor with a stable name; push/pull/bind/leaf all walk
// the tree in this one order.
template <class B, class F>
void visit_attn(B& b, const std::string& p, F&& f) {
  f(p + ".Wq", b.Wq);
  f(p + ".Wk", b.Wk);
  f(p + ".Wv", b.Wv);
  f(p + ".Wo", b.Wo);
  f(p + ".bo", b.bo);
  f(p + ".ln_g", b.ln_g);
  f(p + ".ln_b", b.ln_b);
}

template <class B, class F>
void visit_ff(B& b, const std::string& p, F&& f) {
  f(p + ".W1", b.W1);
  f(p + ".b1", b.b1);
  f(p + ".W2", b.W2);
  f(p + ".b2", b.b2);
  f(p + ".ln_g", b.ln_g);
  f(p + ".ln_b", b.ln_b);
}

template <class P, class F>
void visit_writer(P& p, F&& f) {
  f("writer.tok_emb", p.tok_emb);
  f("writer.type_emb", p.type_emb);
  f("writer.rel_emb", p.rel_emb);
  for (size_t i = 0; i < p.global.size(); ++i) {
    std::string pre = "writer.g" + std::to_string(i);
    visit_attn(p.global[i].attn, pre + ".attn", f);
    visit_ff(p.global[i].ff, pre + ".ff", f);
  }
  for (size_t i = 0; i < p.local.size(); ++i) {
    std::string pre = "writer.l" + std::to_string(i);
    auto& l = p.local[i];
    for (size_t h = 0; h < l.W3.size(); ++h)
      f(pre + ".W3." + std::to_string(h), l.W3[h]);
    f(pre + ".Wl", l.Wl);
    f(pre + ".bl", l.bl);
    f(pre + ".Wz", l.Wz);
    f(pre + ".Uz", l.Uz);
    f(pre + ".bz", l.bz);
    f(pre + ".Wr", l.Wr);
    f(pre + ".Ur", l.Ur);
    f(pre + ".br", l.br);
    f(pre + ".Wn", l.Wn);
    f(pre + ".Un", l.Un);
    f(pre + ".bn", l.bn);
  }
  for (size_t i = 0; i < p.dec.size(); ++i) {
    std::string pre = "writer.d" + std::to_string(i);
    visit_attn(p.dec[i].self_attn, pre + ".self", f);
    visit_attn(p.dec[i].cross_attn, pre + ".cross", f);
    visit_ff(p.dec[i].ff, pre + ".ff", f);
  }
  f("writer.out_w", p.out_w);
  f("writer.out_b", p.out_b);
}

inline WriterParams init_writer_params(const WriterConfig& cfg, int vocab_size,
                                       Rng& rng) {
  validate_writer_config(cfg);
  if (vocab_size < 4) throw UsageError("writer: vocabulary too small");
  int d = cfg.d, ff = writer_ff(cfg);
  double es = 1.0 / std::sqrt(static_cast<double>(d));
  WriterParams p = shaped_writer<Mat>(cfg);
  p.tok_emb = Mat::randn(vocab_size, d, rng, es);
  p.type_emb = Mat::randn(kNumEntityTypes, d, rng, es);
  p.rel_emb = Mat::randn(kNumWriterRelations, d, rng, es);
  auto attn_init = [&](AttnBlockT<Mat>& a) {
    a.Wq = Mat::glorot(d, d, rng);
    a.Wk = Mat::glorot(d, d, rng);
    a.Wv = Mat::glorot(d, d, rng);
    a.Wo = Mat::glorot(d, d, rng);
    a.bo = Mat::zeros(1, d);
    a.ln_g = Mat::full(1, d, 1.0);
    a.ln_b = Mat::zeros(1, d);
  };
  auto ff_init = [&](FfBlockT<Mat>& b) {
    b.W1 = Mat::glorot(ff, d, rng);
    b.b1 = Mat::zeros(1, ff);
    b.W2 = Mat::glorot(d, ff, rng);
    b.b2 = Mat::zeros(1, d);
    b.ln_g = Mat::full(1, d, 1.0);
    b.ln_b = Mat::zeros(1, d);
  };
  for (auto& g : p.global) {
    attn_init(g.attn);
    ff_init(g.ff);
  }
  for (auto& l : p.local) {
    for (auto& w : l.W3) w = Mat::glorot(d, 2 * d, rng);
    l.Wl = Mat::glorot(d, cfg.heads * d, rng);
    l.bl = Mat::zeros(1, d);
    for (Mat* w : {&l.Wz, &l.Uz, &l.Wr, &l.Ur, &l.Wn, &l.Un})
      *w = Mat::glorot(d, d, rng);
    for (Mat* b : {&l.bz, &l.br, &l.bn}) *b = Mat::zeros(1, d);
  }
  for (auto& dl : p.dec) {
    attn_init(dl.self_attn);
    attn_init(dl.cross_attn);
    ff_init(dl.ff);
  }
  p.out_w = Mat::glorot(vocab_size, d, rng);
  p.out_b = Mat::zeros(1, vocab_size);
  return p;
}

inline void push_writer_params(ParamStore& ps, const WriterParams& p) {
  visit_writer(p, [&ps](const std::string& name, const Mat& m) {
    ps.add(name, m);
  });
}

inline void pull_writer_params(const ParamStore& ps, WriterParams& p) {
  visit_writer(p, [&ps](const std::string& name, Mat& m) {
    m = ps.find(name)->value;
  });
}

inline WriterVars bind_writer(Binder& bind, ParamStore& ps,
                              const WriterConfig& cfg) {
  WriterVars v = shaped_writer<Var>(cfg);
  visit_writer(v, [&](const std::string& name, Var& var) {
    Param* p = ps.find(name);
    assert(p != nullptr);
    var = bind(*p);
  });
  return v;
}

inline WriterVars leaf_writer(Tape& tape, const WriterParams& p,
                              const WriterConfig& cfg) {
  std::vector<const Mat*> mats;
  visit_writer(p, [&mats](const std::string&, const Mat& m) {
    mats.push_back(&m);
  });
  WriterVars v = shaped_writer<Var>(cfg);
  size_t k = 0;
  visit_writer(v, [&](const std::string&, Var& var) {
    var = tape.leaf(*mats[k++]);
  });
  return v;
}

// Sinusoidal token positions (graph nodes deliberately get none: the node
// set has no order, and the global encoder stays permutation-equivariant).
inline Mat positional_encoding(int length, int d) {
  Mat pe(length, d);
  for (int t = 0; t < length; ++t)
    for (int c = 0; c < d; ++c) {
      double angle =
          t / std::pow(10000.0, 2.0 * (c / 2) / static_cast<double>(d));
      pe(t, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

inline Mat causal_mask(int length) {
  Mat m(length, length);
  for (int r = 0; r < length; ++r)
    for (int c = r + 1; c < length; ++c) m(r, c) = -1e9;
  return m;
}

// Multi-head scaled dot-product attention; queries from `q_in`, keys and
// values from `kv_in`. `mask` is added to the raw scores when present.
inline Var attend_t(Tape& tape, Var q_in, Var kv_in, const AttnBlockT<Var>& a,
                    int heads, const Mat* mask) {
  int d = q_in.cols();
  assert(d % heads == 0);
  int dk = d / heads;
  Var Q = matmul(q_in, transpose(a.Wq));
  Var K = matmul(kv_in, transpose(a.Wk));
  Var V = matmul(kv_in, transpose(a.Wv));
  Var maskv;
  if (mask) maskv = tape.leaf(*mask);
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var Qh = slice_cols(Q, h * dk, dk);
    Var Kh = slice_cols(K, h * dk, dk);
    Var Vh = slice_cols(V, h * dk, dk);
    Var s = scale(matmul(Qh, transpose(Kh)), 1.0 / std::sqrt(double(dk)));
    if (mask) s = add(s, maskv);
    outs.push_back(matmul(softmax_rows(s), Vh));
  }
  Var cat = heads == 1 ? outs[0] : concat_cols(outs);
  return add_rowvec(matmul(cat, transpose(a.Wo)), a.bo);
}

inline Var feed_forward_t(Var x, const FfBlockT<Var>& f) {
  Var h = relu(add_rowvec(matmul(x, transpose(f.W1)), f.b1));
  return add_rowvec(matmul(h, transpose(f.W2)), f.b2);
}

// Node features: mean of surface-token embeddings plus the type embedding.
inline Var init_node_features_t(Tape& tape, const WriterVars& w,
                                const KnowledgeGraph& g,
                                const Vocabulary& vocab) {
  if (g.nodes.empty()) throw DataError("writer: graph has no entities");
  std::vector<Var> rows;
  rows.reserve(g.nodes.size());
  for (const EntityNode& n : g.nodes) {
    std::vector<int> ids = vocab.encode(n.surface);
    Var toks = gather_rows(w.tok_emb, ids);
    Var mean = scale(col_sum(toks), 1.0 / static_cast<double>(ids.size()));
    rows.push_back(add(mean, row_of(w.type_emb, static_cast<int>(n.etype))));
  }
  return concat_rows(rows);
}

// Post-norm transformer encoder over the fully connected node set.
inline Var global_encode_t(Tape& tape, Var x, const WriterVars& w, int heads) {
  for (const GlobalLayerT<Var>& L : w.global) {
    x = layer_norm_rows(add(x, attend_t(tape, x, x, L.attn, heads, nullptr)),
                        L.attn.ln_g, L.attn.ln_b);
    x = layer_norm_rows(add(x, feed_forward_t(x, L.ff)), L.ff.ln_g, L.ff.ln_b);
  }
  return x;
}

// A node's local neighborhood: sources of incoming edges, plus targets of
// outgoing edges under the reversed relation label when enabled.
struct LocalNeighbor {
  int j;
  int rel;
};

inline std::vector<std::vector<LocalNeighbor>> local_neighborhoods(
    const KnowledgeGraph& g, bool reverse_edges) {
  std::vector<std::vector<LocalNeighbor>> nb(
      static_cast<size_t>(g.N()));
  for (const RelationEdge& e : g.edges) {
    nb[static_cast<size_t>(e.tail)].push_back(
        {e.head, static_cast<int>(e.label)});
    if (reverse_edges)
      nb[static_cast<size_t>(e.head)].push_back(
          {e.tail, static_cast<int>(e.label) + kNumRelationLabels});
  }
  return nb;
}

// Relation-aware local attention. Per head: score(i,j) = r_ij . (W3 [v_i;
// v_j]), attention = softmax over ReLU'd scores of the neighborhood,
// aggregate sum a_ij (r_ij ⊙ v_j); heads concatenate and project to d.
// Isolated nodes yield exact zero rows. `attn_out`, when given, receives one
// heads x |N_i| weight matrix per node (0-column for isolated nodes).
inline Var local_encode_t(Tape& tape, Var vhat, const KnowledgeGraph& g,
                          Var rel_emb, const LocalLayerT<Var>& L, int heads,
                          bool reverse_edges,
                          std::vector<Mat>* attn_out = nullptr) {
  auto nb = local_neighborhoods(g, reverse_edges);
  int d = vhat.cols();
  Var zero = tape.leaf(Mat::zeros(1, d));
  std::vector<Var> rows;
  rows.reserve(nb.size());
  for (size_t i = 0; i < nb.size(); ++i) {
    if (nb[i].empty()) {
      rows.push_back(zero);
      if (attn_out) attn_out->push_back(Mat(heads, 0));
      continue;
    }
    int m = static_cast<int>(nb[i].size());
    std::vector<int> js, rels;
    for (const LocalNeighbor& n : nb[i]) {
      js.push_back(n.j);
      rels.push_back(n.rel);
    }
    Var Vj = gather_rows(vhat, js);
    Var Rj = gather_rows(rel_emb, rels);
    Var Vi = gather_rows(vhat, std::vector<int>(static_cast<size_t>(m),
                                                static_cast<int>(i)));
    Var X = concat_cols({Vi, Vj});
    Mat weights(heads, m);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var proj = matmul(X, transpose(L.W3[static_cast<size_t>(h)]));
      Var s = row_sum(mul(proj, Rj));                 // m x 1 scores
      Var a = softmax_rows(transpose(relu(s)));       // 1 x m
      for (int c = 0; c < m; ++c) weights(h, c) = a.val()(0, c);
      head_outs.push_back(matmul(a, mul(Rj, Vj)));    // 1 x d
    }
    if (attn_out) attn_out->push_back(std::move(weights));
    Var cat = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    rows.push_back(add(matmul(cat, transpose(L.Wl)), L.bl));
  }
  return concat_rows(rows);
}

// GRU gate merging the layer input x with the locally attended state h:
// z=sigmoid(Wz x+Uz h+bz), r=sigmoid(Wr x+Ur h+br),
// n=tanh(Wn x+Un (r⊙h)+bn), out = (1-z)⊙h + z⊙n.
inline Var gru_merge_t(Var x, Var h, const LocalLayerT<Var>& L) {
  Var z = sigmoid(add_rowvec(
      add(matmul(x, transpose(L.Wz)), matmul(h, transpose(L.Uz))), L.bz));
  Var r = sigmoid(add_rowvec(
      add(matmul(x, transpose(L.Wr)), matmul(h, transpose(L.Ur))), L.br));
  Var n = tanh(add_rowvec(
      add(matmul(x, transpose(L.Wn)), matmul(mul(r, h), transpose(L.Un))),
      L.bn));
  return add(h, mul(z, sub(n, h)));
}

struct NodeStagesT {
  Var v, vhat, hlocal, H;
};

// Full node encoding cascade: init -> global transformer -> per local layer
// (relation attention, GRU merge), each local layer consuming the previous
// merged state.
inline NodeStagesT encode_nodes_t(Tape& tape, const WriterVars& w,
                                  const KnowledgeGraph& g,
                                  const Vocabulary& vocab,
                                  const WriterConfig& cfg) {
  NodeStagesT st;
  st.v = init_node_features_t(tape, w, g, vocab);
  st.vhat = global_encode_t(tape, st.v, w, cfg.heads);
  st.H = st.vhat;
  st.hlocal = st.vhat;
  for (const LocalLayerT<Var>& L : w.local) {
    st.hlocal = local_encode_t(tape, st.H, g, w.rel_emb, L, cfg.heads,
                               cfg.reverse_edges);
    st.H = gru_merge_t(st.H, st.hlocal, L);
  }
  return st;
}

// Decoder on raw input ids (length >= 1): causal self-attention, cross
// attention to the node states H, feed-forward; returns T x |V| log-probs.
inline Var decoder_logprobs_t(Tape& tape, const WriterVars& w, Var H,
                              const std::vector<int>& input,
                              const WriterConfig& cfg) {
  assert(!input.empty());
  int T = static_cast<int>(input.size());
  // sqrt(d) embedding scale keeps token identity comparable in magnitude to
  // the positional signal (standard transformer input recipe)
  Var x = add(scale(gather_rows(w.tok_emb, input),
                    std::sqrt(static_cast<double>(cfg.d))),
              tape.leaf(positional_encoding(T, cfg.d)));
  Mat mask = causal_mask(T);
  for (const DecoderLayerT<Var>& L : w.dec) {
    x = layer_norm_rows(
        add(x, attend_t(tape, x, x, L.self_attn, cfg.heads, &mask)),
        L.self_attn.ln_g, L.self_attn.ln_b);
    x = layer_norm_rows(
        add(x, attend_t(tape, x, H, L.cross_attn, cfg.heads, nullptr)),
        L.cross_attn.ln_g, L.cross_attn.ln_b);
    x = layer_norm_rows(add(x, feed_forward_t(x, L.ff)), L.ff.ln_g,
                        L.ff.ln_b);
  }
  Var logits = add_rowvec(matmul(x, transpose(w.out_w)), w.out_b);
  return log_softmax_rows(logits);
}

inline void validate_target(const std::vector<int>& y, int max_length) {
  if (y.size() < 2 || y.front() != Vocabulary::kBos ||
      y.back() != Vocabulary::kEos)
    throw UsageError("writer: target must be <bos> ... <eos>");
  if (static_cast<int>(y.size()) - 1 > max_length)
    throw UsageError("writer: target longer than max_length");
}

// Teacher forcing: input y[0..T-1], predictions p_t for y[1..T].
inline Var decode_teacher_forced_t(Tape& tape, const WriterVars& w, Var H,
                                   const std::vector<int>& y,
                                   const WriterConfig& cfg) {
  validate_target(y, cfg.max_length);
  std::vector<int> input(y.begin(), y.end() - 1);
  return decoder_logprobs_t(tape, w, H, input, cfg);
}

// Token-level cross entropy, summed over steps.
inline Var sl_loss_t(Var logp, const std::vector<int>& targets) {
  if (static_cast<int>(targets.size()) != logp.rows())
    throw UsageError("writer: loss targets do not match prediction steps");
  return neg(sum_all(pick(logp, targets)));
}

// ---------------------------------------------------------------------------
// Plain (non-tape) front end.

struct WriterModel {
  WriterConfig cfg;
  WriterParams params;
  Vocabulary vocab;
};

struct NodeStates {
  Mat v, vhat, hlocal, H;
};

struct DecoderOutput {
  Mat probs;                        // T x |V| next-token distributions
  std::vector<double> chosen_logp;  // log p_t(y_t), length T
};

inline Mat init_node_features(const KnowledgeGraph& g, const Vocabulary& vocab,
                              const WriterParams& p, const WriterConfig& cfg) {
  Tape tape;
  WriterVars w = leaf_writer(tape, p, cfg);
  return init_node_features_t(tape, w, g, vocab).val();
}

inline Mat global_encode(const Mat& x, const WriterParams& p,
                         const WriterConfig& cfg) {
  Tape tape;
  WriterVars w = leaf_writer(tape, p, cfg);
  return global_encode_t(tape, tape.leaf(x), w, cfg.heads).val();
}

inline Mat local_encode(const Mat& vhat, const KnowledgeGraph& g,
                        const WriterParams& p, const WriterConfig& cfg,
                        int layer = 0, std::vector<Mat>* attn_out = nullptr) {
  Tape tape;
  WriterVars w = leaf_writer(tape, p, cfg);
  return local_encode_t(tape, tape.leaf(vhat), g, w.rel_emb,
                        w.local[static_cast<size_t>(layer)], cfg.heads,
                        cfg.reverse_edges, attn_out)
      .val();
}

inline Mat merge_states(const Mat& x, const Mat& h, const WriterParams& p,
                        const WriterConfig& cfg, int layer = 0) {
  if (x.rows != h.rows || x.cols != h.cols)
    throw UsageError("writer: merge_states shape mismatch");
  Tape tape;
  WriterVars w = leaf_writer(tape, p, cfg);
  return gru_merge_t(tape.leaf(x), tape.leaf(h),
                     w.local[static_cast<size_t>(layer)])
      .val();
}

inline NodeStates encode_nodes(const WriterModel& m, const KnowledgeGraph& g) {
  Tape tape;
  WriterVars w = leaf_writer(tape, m.params, m.cfg);
  NodeStagesT st = encode_nodes_t(tape, w, g, m.vocab, m.cfg);
  return {st.v.val(), st.vhat.val(), st.hlocal.val(), st.H.val()};
}

inline DecoderOutput decode_teacher_forced(const WriterModel& m, const Mat& H,
                                           const std::vector<int>& y) {
  Tape tape;
  WriterVars w = leaf_writer(tape, m.params, m.cfg);
  Mat logp = decode_teacher_forced_t(tape, w, tape.leaf(H), y, m.cfg).val();
  DecoderOutput out;
  out.probs = Mat(logp.rows, logp.cols);
  for (int r = 0; r < logp.rows; ++r)
    for (int c = 0; c < logp.cols; ++c)
      out.probs(r, c) = std::exp(logp(r, c));
  out.chosen_logp.resize(static_cast<size_t>(logp.rows));
  for (int r = 0; r < logp.rows; ++r)
    out.chosen_logp[static_cast<size_t>(r)] = logp(r, y[static_cast<size_t>(r) + 1]);
  return out;
}

inline double sl_loss(const DecoderOutput& out,
                      const std::vector<int>& targets) {
  if (static_cast<int>(targets.size()) != out.probs.rows)
    throw UsageError("writer: loss targets do not match prediction steps");
  double total = 0.0;
  for (int t = 0; t < out.probs.rows; ++t)
    total -= std::log(out.probs(t, targets[static_cast<size_t>(t)]));
  return total;
}

// ---------------------------------------------------------------------------
// Generation.

enum class DecodeStrategy { Greedy, Sample, Beam };

struct GenerationConfig {
  int max_length = 430;
  DecodeStrategy strategy = DecodeStrategy::Greedy;
  int beam_width = 2;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct GeneratedParagraph {
  std::vector<int> ids;             // emitted tokens, <eos> excluded
  std::vector<std::string> tokens;  // same, as vocabulary strings
  std::vector<double> logprobs;     // model log-prob per decoding step,
                                    // including the terminating <eos>
  double logprob_sum = 0.0;
  std::string text;                 // detokenized, placeholders restored
};

namespace detail {

// Model log-probs for the next token after the given prefix (1 x |V|).
inline Mat writer_next_logprobs(const WriterModel& m, const Mat& H,
                                const std::vector<int>& prefix) {
  Tape tape;
  WriterVars w = leaf_writer(tape, m.params, m.cfg);
  Mat lp = decoder_logprobs_t(tape, w, tape.leaf(H), prefix, m.cfg).val();
  Mat row(1, lp.cols);
  for (int c = 0; c < lp.cols; ++c) row(0, c) = lp(lp.rows - 1, c);
  return row;
}

inline GeneratedParagraph finish_paragraph(const WriterModel& m,
                                           const KnowledgeGraph& g,
                                           std::vector<int> ids,
                                           std::vector<double> logprobs) {
  GeneratedParagraph out;
  out.ids = std::move(ids);
  out.logprobs = std::move(logprobs);
  for (double lp : out.logprobs) out.logprob_sum += lp;
  out.tokens = m.vocab.decode(out.ids);
  std::vector<std::string> words = restore_placeholders(out.tokens, g);
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out.text += ' ';
    out.text += words[i];
  }
  return out;
}

}  // namespace detail

inline GeneratedParagraph generate_from(const WriterModel& m, const Mat& H,
                                        const KnowledgeGraph& g,
                                        const GenerationConfig& gc) {
  if (gc.max_length < 1) throw UsageError("generate: max_length must be >= 1");
  if (gc.temperature <= 0.0)
    throw UsageError("generate: temperature must be positive");
  if (gc.beam_width < 1) throw UsageError("generate: beam width must be >= 1");

  if (gc.strategy == DecodeStrategy::Beam) {
    struct Hyp {
      std::vector<int> input;  // starts with <bos>
      std::vector<double> lps;
      double sum = 0.0;
      bool done = false;
    };
    std::vector<Hyp> live = {{{Vocabulary::kBos}, {}, 0.0, false}};
    std::vector<Hyp> finished;
    for (int step = 0; step < gc.max_length && !live.empty(); ++step) {
      std::vector<Hyp> cands;
      for (const Hyp& h : live) {
        Mat lp = detail::writer_next_logprobs(m, H, h.input);
        for (int v = 0; v < lp.cols; ++v) {
          Hyp c = h;
          c.input.push_back(v);
          c.lps.push_back(lp(0, v));
          c.sum += lp(0, v);
          c.done = (v == Vocabulary::kEos);
          cands.push_back(std::move(c));
        }
      }
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Hyp& a, const Hyp& b) { return a.sum > b.sum; });
      if (static_cast<int>(cands.size()) > gc.beam_width)
        cands.resize(static_cast<size_t>(gc.beam_width));
      live.clear();
      for (Hyp& c : cands) {
        if (c.done)
          finished.push_back(std::move(c));
        else
          live.push_back(std::move(c));
      }
    }
    const Hyp* best = nullptr;
    for (const Hyp& h : finished)
      if (!best || h.sum > best->sum) best = &h;
    if (!best)
      for (const Hyp& h : live)
        if (!best || h.sum > best->sum) best = &h;
    std::vector<int> ids(best->input.begin() + 1, best->input.end());
    if (best->done) ids.pop_back();
    return detail::finish_paragraph(m, g, std::move(ids), best->lps);
  }

  Rng rng(gc.seed);
  std::vector<int> prefix = {Vocabulary::kBos};
  std::vector<double> lps;
  std::vector<int> ids;
  for (int step = 0; step < gc.max_length; ++step) {
    Mat lp = detail::writer_next_logprobs(m, H, prefix);
    int choice = 0;
    if (gc.strategy == DecodeStrategy::Greedy) {
      for (int c = 1; c < lp.cols; ++c)
        if (lp(0, c) > lp(0, choice)) choice = c;
    } else {
      // ancestral sampling from the tempered distribution; the recorded
      // log-prob stays the model's own (what the RL gradient needs)
      std::vector<double> q(static_cast<size_t>(lp.cols));
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < lp.cols; ++c)
        mx = std::max(mx, lp(0, c) / gc.temperature);
      double z = 0.0;
      for (int c = 0; c < lp.cols; ++c) {
        q[static_cast<size_t>(c)] = std::exp(lp(0, c) / gc.temperature - mx);
        z += q[static_cast<size_t>(c)];
      }
      double u = rng.uniform() * z, acc = 0.0;
      choice = lp.cols - 1;
      for (int c = 0; c < lp.cols; ++c) {
        acc += q[static_cast<size_t>(c)];
        if (u < acc) {
          choice = c;
          break;
        }
      }
    }
    lps.push_back(lp(0, choice));
    if (choice == Vocabulary::kEos) break;
    ids.push_back(choice);
    prefix.push_back(choice);
  }
  return detail::finish_paragraph(m, g, std::move(ids), std::move(lps));
}

inline GeneratedParagraph generate(const WriterModel& m,
                                   const KnowledgeGraph& g,
                                   const GenerationConfig& gc) {
  NodeStates st = encode_nodes(m, g);
  return generate_from(m, st.H, g, gc);
}

// ---------------------------------------------------------------------------
// Supervised pre-training.

struct WriterTrainConfig {
  int epochs = 30;
  int batch_size = 8;    // instances folded into one optimizer step
  double base_lr = 0.5;  // fed through the warmup + inverse-sqrt schedule
  int warmup = 4000;
  std::uint64_t seed = 0;
  int patience = 3;    // dev-score epochs without improvement before stopping
  long max_steps = 0;  // 0 = no cap
};

struct WriterStepLog {
  long step = 0;
  double per_token_loss = 0.0;
  double lr = 0.0;
};

// Target = <bos> + placeholder-substituted abstract + <eos>, truncated so
// the prediction count stays within max_length.
inline std::vector<int> writer_target(const DocumentInstance& inst,
                                      const Vocabulary& vocab,
                                      int max_length) {
  std::vector<int> ids =
      vocab.encode(apply_placeholders(*inst.abstract, inst.graph));
  std::vector<int> y;
  y.reserve(ids.size() + 2);
  y.push_back(Vocabulary::kBos);
  for (int id : ids) {
    if (static_cast<int>(y.size()) >= max_length) break;
    y.push_back(id);
  }
  y.push_back(Vocabulary::kEos);
  return y;
}

inline WriterModel pretrain_writer(
    const std::vector<const DocumentInstance*>& data, const Vocabulary& vocab,
    const WriterConfig& cfg, const WriterTrainConfig& tc,
    const std::function<double(const WriterModel&)>& dev_score = {},
    std::vector<WriterStepLog>* log = nullptr,
    const WriterParams* warm_start = nullptr) {
  validate_writer_config(cfg);
  if (tc.batch_size < 1) throw UsageError("writer: batch_size must be >= 1");
  std::vector<const DocumentInstance*> usable;
  std::vector<std::vector<int>> targets;
  for (const DocumentInstance* inst : data) {
    if (!inst->abstract || inst->abstract->empty() || inst->graph.nodes.empty())
      continue;
    usable.push_back(inst);
    targets.push_back(writer_target(*inst, vocab, cfg.max_length));
  }
  if (usable.empty())
    throw DataError("writer: no trainable instances (need abstract + graph)");

  Rng rng(cfg.seed);
  Rng prng = rng.fork(0);
  WriterParams params =
      warm_start ? *warm_start : init_writer_params(cfg, vocab.size(), prng);
  ParamStore ps;
  push_writer_params(ps, params);
  AdamOpt opt(tc.base_lr);

  WriterModel best;
  double best_score = -std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  long step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
    std::vector<int> order(usable.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng erng = rng.fork(1 + static_cast<std::uint64_t>(epoch));
    erng.shuffle(order);
    const size_t bs = static_cast<size_t>(tc.batch_size);
    for (size_t at = 0; at < order.size() && !stop; at += bs) {
      ++step;
      opt.set_lr(noam_lr(tc.base_lr, cfg.d, tc.warmup, step));
      ps.zero_grad();
      Tape tape;
      Binder bind(tape);
      WriterVars w = bind_writer(bind, ps, cfg);
      Var total;
      long toks = 0;
      for (size_t k = at; k < std::min(order.size(), at + bs); ++k) {
        const size_t idx = static_cast<size_t>(order[k]);
        const std::vector<int>& y = targets[idx];
        std::vector<int> tgt(y.begin() + 1, y.end());
        NodeStagesT st = encode_nodes_t(tape, w, usable[idx]->graph, vocab, cfg);
        Var lp = decode_teacher_forced_t(tape, w, st.H, y, cfg);
        Var li = sl_loss_t(lp, tgt);
        total = (toks == 0) ? li : add(total, li);
        toks += static_cast<long>(tgt.size());
      }
      Var loss = scale(total, 1.0 / static_cast<double>(toks));
      tape.backward(loss);
      bind.collect();
      opt.step(ps);
      if (log) log->push_back({step, loss.scalar(), opt.lr()});
      if (tc.max_steps > 0 && step >= tc.max_steps) stop = true;
    }
    if (dev_score) {
      WriterModel cur{cfg, params, vocab};
      pull_writer_params(ps, cur.params);
      double s = dev_score(cur);
      if (s > best_score) {
        best_score = s;
        best = cur;
        bad_epochs = 0;
      } else if (++bad_epochs >= tc.patience) {
        stop = true;
      }
    }
  }
  if (dev_score && best_score > -std::numeric_limits<double>::infinity())
    return best;
  WriterModel m{cfg, params, vocab};
  pull_writer_params(ps, m.params);
  return m;
}

}  // namespace scribe

#pragma once

// Link prediction: multi-hop attentive graph encoding, convolutional triplet
// scoring, new-link selection, graph enrichment, and ranking evaluation.

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "scribe/autograd.hpp"
#include "scribe/embedding.hpp"
#include "scribe/graph.hpp"
#include "scribe/optim.hpp"
#include "scribe/rng.hpp"

namespace scribe {

struct AuxiliaryPath {
  int source = 0;
  int target = 0;
  std::vector<int> labels;        // relation labels along the path
  std::vector<int> edge_indices;  // indices into graph.edges (lex-smallest)

  int hops() const { return static_cast<int>(labels.size()); }

  // Elementwise sum of the path's relation embeddings.
  Mat relation_sum(const Mat& relations) const {
    Mat s = Mat::zeros(1, relations.cols);
    for (int l : labels)
      for (int c = 0; c < relations.cols; ++c) s(0, c) += relations(l, c);
    return s;
  }
};

// One auxiliary path per ordered (source, target) pair connected by a simple
// directed path of length in [2, hops]; among several, the lexicographically
// smallest edge-index sequence. A DFS that explores edges in ascending index
// order visits paths in exactly that order, so the first hit per pair wins.
inline std::vector<AuxiliaryPath> collect_auxiliary_edges(
    const KnowledgeGraph& g, int hops) {
  if (hops < 2) throw UsageError("auxiliary edges need hops >= 2");
  int n = g.N();
  std::vector<std::vector<int>> out_edges(n);  // sorted edge indices per node
  for (size_t e = 0; e < g.edges.size(); ++e)
    out_edges[g.edges[e].head].push_back(static_cast<int>(e));

  std::vector<AuxiliaryPath> result;
  std::vector<char> on_path(n, 0);
  std::vector<char> found(n, 0);
  std::vector<int> path_edges;

  for (int src = 0; src < n; ++src) {
    std::fill(found.begin(), found.end(), 0);
    std::vector<AuxiliaryPath> local;
    auto dfs = [&](auto&& self, int node, int depth) -> void {
      if (depth >= 2 && node != src && !found[node]) {
        found[node] = 1;
        AuxiliaryPath p;
        p.source = src;
        p.target = node;
        p.edge_indices = path_edges;
        for (int e : path_edges)
          p.labels.push_back(static_cast<int>(g.edges[e].label));
        local.push_back(std::move(p));
      }
      if (depth == hops) return;
      for (int e : out_edges[node]) {
        int next = g.edges[e].tail;
        if (on_path[next]) continue;
        on_path[next] = 1;
        path_edges.push_back(e);
        self(self, next, depth + 1);
        path_edges.pop_back();
        on_path[next] = 0;
      }
    };
    on_path[src] = 1;
    dfs(dfs, src, 0);
    on_path[src] = 0;
    // stable order: by target id for reproducibility
    std::sort(local.begin(), local.end(),
              [](const AuxiliaryPath& a, const AuxiliaryPath& b) {
                return a.target < b.target;
              });
    result.insert(result.end(), local.begin(), local.end());
  }
  return result;
}

struct ReaderConfig {
  int d = 16;          // embedding dimension
  int hops = 2;        // auxiliary-path horizon
  int filters = 50;    // convolution filter count F
  double leaky_slope = 0.2;
  double lr = 0.1;     // Adam step size in training
  int epochs = 50;
  std::uint64_t seed = 0;
  bool freeze_aux_sums = false;  // keep path sums at their pretrained values
  double min_link_score = -1e300;  // optional filter for predict_links
};

struct ReaderParams {
  Mat W1;       // d x 3d, triplet fusion
  Mat attn;     // 1 x d, attention scorer
  Mat W2;       // d x d, residual transform on the original embedding
  Mat L;        // d x d, relation update
  Mat Lb;       // 1 x d, relation update bias
  Mat omega;    // F x 3, convolution filters over [h r t] columns
  Mat omega_b;  // 1 x F
  Mat fc;       // 1 x F*d, final scorer
  Mat fc_b;     // 1 x 1
};

// L and W2 start as identity so the encoder initially preserves the
// pretrained geometry; everything else is Glorot noise.
inline ReaderParams init_reader_params(const ReaderConfig& cfg, Rng& rng) {
  ReaderParams p;
  p.W1 = Mat::glorot(cfg.d, 3 * cfg.d, rng);
  p.attn = Mat::glorot(1, cfg.d, rng);
  p.W2 = Mat::zeros(cfg.d, cfg.d);
  for (int i = 0; i < cfg.d; ++i) p.W2(i, i) = 1.0;
  p.L = Mat::zeros(cfg.d, cfg.d);
  for (int i = 0; i < cfg.d; ++i) p.L(i, i) = 1.0;
  p.Lb = Mat::zeros(1, cfg.d);
  p.omega = Mat::glorot(cfg.filters, 3, rng);
  p.omega_b = Mat::zeros(1, cfg.filters);
  p.fc = Mat::glorot(1, cfg.filters * cfg.d, rng);
  p.fc_b = Mat::zeros(1, 1);
  return p;
}

constexpr const char* kReaderParamNames[] = {
    "reader.W1",    "reader.attn",    "reader.W2",
    "reader.L",     "reader.Lb",      "reader.omega",
    "reader.omega_b", "reader.fc",    "reader.fc_b"};

inline void push_reader_params(ParamStore& ps, const ReaderParams& p,
                               const EmbeddingTable& t) {
  ps.add("reader.W1", p.W1);
  ps.add("reader.attn", p.attn);
  ps.add("reader.W2", p.W2);
  ps.add("reader.L", p.L);
  ps.add("reader.Lb", p.Lb);
  ps.add("reader.omega", p.omega);
  ps.add("reader.omega_b", p.omega_b);
  ps.add("reader.fc", p.fc);
  ps.add("reader.fc_b", p.fc_b);
  ps.add("table.entities", t.entities);
  ps.add("table.relations", t.relations);
}

inline void pull_reader_params(const ParamStore& ps, ReaderParams& p,
                               EmbeddingTable& t) {
  p.W1 = ps.find("reader.W1")->value;
  p.attn = ps.find("reader.attn")->value;
  p.W2 = ps.find("reader.W2")->value;
  p.L = ps.find("reader.L")->value;
  p.Lb = ps.find("reader.Lb")->value;
  p.omega = ps.find("reader.omega")->value;
  p.omega_b = ps.find("reader.omega_b")->value;
  p.fc = ps.find("reader.fc")->value;
  p.fc_b = ps.find("reader.fc_b")->value;
  t.entities = ps.find("table.entities")->value;
  t.relations = ps.find("table.relations")->value;
}

// Tape-side handles to the reader parameters.
struct ReaderVars {
  Var W1, attn, W2, L, Lb, omega, omega_b, fc, fc_b, E, R;
};

inline ReaderVars bind_reader(Binder& bind, ParamStore& ps) {
  ReaderVars v{bind(*ps.find("reader.W1")),    bind(*ps.find("reader.attn")),
               bind(*ps.find("reader.W2")),    bind(*ps.find("reader.L")),
               bind(*ps.find("reader.Lb")),    bind(*ps.find("reader.omega")),
               bind(*ps.find("reader.omega_b")), bind(*ps.find("reader.fc")),
               bind(*ps.find("reader.fc_b")),  bind(*ps.find("table.entities")),
               bind(*ps.find("table.relations"))};
  return v;
}

// Leaf-only variant for inference (no gradients tracked).
inline ReaderVars leaf_reader(Tape& t, const ReaderParams& p,
                              const EmbeddingTable& tab) {
  return {t.leaf(p.W1),    t.leaf(p.attn),   t.leaf(p.W2),
          t.leaf(p.L),     t.leaf(p.Lb),     t.leaf(p.omega),
          t.leaf(p.omega_b), t.leaf(p.fc),   t.leaf(p.fc_b),
          t.leaf(tab.entities), t.leaf(tab.relations)};
}

// Updated relation vectors: r = r̄ Lᵀ + b, applied to all rows including the
// self-relation.
inline Var encode_relations_t(const ReaderVars& rv) {
  return add_rowvec(matmul(rv.R, transpose(rv.L)), rv.Lb);
}

// One incident triplet of an entity: a direct out-edge, an auxiliary path,
// or (for otherwise isolated entities) the learned self-relation.
struct Incident {
  int tail = 0;
  int label = -1;                       // >= 0: direct edge label
  const AuxiliaryPath* path = nullptr;  // set for auxiliary incidents
  bool self = false;
};

inline std::vector<std::vector<Incident>> incident_triplets(
    const KnowledgeGraph& g, const std::vector<AuxiliaryPath>& aux) {
  std::vector<std::vector<Incident>> inc(g.N());
  for (const RelationEdge& e : g.edges)
    inc[e.head].push_back({e.tail, static_cast<int>(e.label), nullptr, false});
  for (const AuxiliaryPath& p : aux)
    inc[p.source].push_back({p.target, -1, &p, false});
  for (int i = 0; i < g.N(); ++i)
    if (inc[i].empty()) inc[i].push_back({i, -1, nullptr, true});
  return inc;
}

// Entity update: ṽ_k = W1[v̄_i; r̄_k; v̄_j_k], â = softmax over
// LeakyReLU(a·ṽ_k), v_i = W2 v̄_i + σ(Σ_k â_k ṽ_k). Returns N x d.
// When attn_out is non-null it receives each entity's attention row.
inline Var encode_entities_t(Tape& tape, const KnowledgeGraph& g,
                             const std::vector<AuxiliaryPath>& aux,
                             const std::vector<int>& rows,
                             const ReaderVars& rv, const ReaderConfig& cfg,
                             std::vector<Mat>* attn_out = nullptr,
                             const Mat* frozen_rel = nullptr) {
  auto inc = incident_triplets(g, aux);
  int n = g.N();

  // rows of [v̄_i ; r̄ ; v̄_j] for every incident triplet, entity-major
  std::vector<int> head_rows, tail_rows, owner;
  std::vector<Var> rel_rows;
  for (int i = 0; i < n; ++i)
    for (const Incident& t : inc[i]) {
      head_rows.push_back(rows[i]);
      tail_rows.push_back(rows[t.tail]);
      owner.push_back(i);
      if (t.self) {
        rel_rows.push_back(row_of(rv.R, kSelfRelation));
      } else if (t.path) {
        if (frozen_rel) {
          // path sums pinned at their pretrained values
          rel_rows.push_back(tape.leaf(t.path->relation_sum(*frozen_rel)));
        } else {
          Var sum = row_of(rv.R, t.path->labels[0]);
          for (size_t k = 1; k < t.path->labels.size(); ++k)
            sum = add(sum, row_of(rv.R, t.path->labels[k]));
          rel_rows.push_back(sum);
        }
      } else {
        rel_rows.push_back(row_of(rv.R, t.label));
      }
    }

  Var rel = concat_rows(rel_rows);
  Var trip = concat_cols(
      {gather_rows(rv.E, head_rows), rel, gather_rows(rv.E, tail_rows)});
  Var vt = matmul(trip, transpose(rv.W1));               // M x d
  Var scores = leaky_relu(matmul(vt, transpose(rv.attn)),
                          cfg.leaky_slope);              // M x 1

  std::vector<Var> fused_rows;
  int at = 0;
  for (int i = 0; i < n; ++i) {
    int k = static_cast<int>(inc[i].size());
    Var s_i = transpose(slice_rows(scores, at, k));      // 1 x k
    Var a_i = softmax_rows(s_i);                         // 1 x k
    if (attn_out) attn_out->push_back(a_i.val());
    fused_rows.push_back(sigmoid(matmul(a_i, slice_rows(vt, at, k))));
    at += k;
  }
  Var fused = concat_rows(fused_rows);                   // N x d
  Var base = matmul(gather_rows(rv.E, rows), transpose(rv.W2));
  return add(base, fused);
}

// Convolutional triplet scorer over row-stacked vectors. Each filter sees
// the (head, relation, tail) values of one coordinate; features are ReLU'd,
// flattened filter-major, and linearly combined. Returns M x 1 scores.
inline Var score_triplets_t(Var h, Var r, Var t, const ReaderVars& rv,
                            int filters) {
  std::vector<Var> feats;
  for (int f = 0; f < filters; ++f) {
    Var w0 = slice_cols(row_of(rv.omega, f), 0, 1);
    Var w1 = slice_cols(row_of(rv.omega, f), 1, 1);
    Var w2 = slice_cols(row_of(rv.omega, f), 2, 1);
    Var bf = slice_cols(rv.omega_b, f, 1);
    Var lin = add(add(mul_scalar(h, w0), mul_scalar(r, w1)), mul_scalar(t, w2));
    feats.push_back(relu(add_scalar(lin, bf)));
  }
  Var flat = concat_cols(feats);  // M x F*d, filter-major blocks
  return add_rowvec(matmul(flat, transpose(rv.fc)), rv.fc_b);
}

// Inference wrappers ---------------------------------------------------------

struct ReaderModel {
  ReaderConfig cfg;
  ReaderParams params;
  EmbeddingTable table;
  Mat frozen_relations;  // set when cfg.freeze_aux_sums (pretrained values)

  const Mat* frozen() const {
    return cfg.freeze_aux_sums ? &frozen_relations : nullptr;
  }
};

struct GraphEncoding {
  Mat V;        // N x d updated entity vectors
  Mat R;        // relation rows (updated), kNumRelationRows x d
  std::vector<int> rows;
};

inline GraphEncoding encode_graph(const ReaderModel& m, const KnowledgeGraph& g,
                                  const std::vector<AuxiliaryPath>& aux) {
  Tape tape;
  ReaderVars rv = leaf_reader(tape, m.params, m.table);
  GraphEncoding enc;
  enc.rows = m.table.rows_for(g);
  enc.V =
      encode_entities_t(tape, g, aux, enc.rows, rv, m.cfg, nullptr, m.frozen())
          .val();
  enc.R = encode_relations_t(rv).val();
  return enc;
}

// Scores a batch of (head, label, tail) candidates against one encoding.
inline std::vector<double> score_candidates(
    const ReaderModel& m, const GraphEncoding& enc,
    const std::vector<std::array<int, 3>>& cands) {
  if (cands.empty()) return {};
  Tape tape;
  ReaderVars rv = leaf_reader(tape, m.params, m.table);
  Var V = tape.leaf(enc.V);
  Var R = tape.leaf(enc.R);
  std::vector<int> hs, rs, ts;
  for (const auto& c : cands) {
    hs.push_back(c[0]);
    rs.push_back(c[1]);
    ts.push_back(c[2]);
  }
  Var s = score_triplets_t(gather_rows(V, hs), gather_rows(R, rs),
                           gather_rows(V, ts), rv, m.cfg.filters);
  std::vector<double> out(cands.size());
  for (size_t i = 0; i < cands.size(); ++i) out[i] = s.val()(static_cast<int>(i), 0);
  return out;
}

inline double score_one(const ReaderModel& m, const GraphEncoding& enc, int h,
                        int label, int t) {
  return score_candidates(m, enc, {{{h, label, t}}})[0];
}

// ---------------------------------------------------------------------------
// Training

struct TrainSample {
  // per-graph positive and corrupted triplets as node ids
  std::vector<std::array<int, 3>> pos, neg;
};

inline bool has_edge(const KnowledgeGraph& g, int h, int label, int t) {
  for (const RelationEdge& e : g.edges)
    if (e.head == h && static_cast<int>(e.label) == label && e.tail == t)
      return true;
  return false;
}

// One uniform head corruption and one tail corruption per positive, avoiding
// existing edges when a few resamples suffice.
inline TrainSample sample_epoch(const KnowledgeGraph& g, Rng& rng) {
  TrainSample s;
  int n = g.N();
  for (const RelationEdge& e : g.edges) {
    int label = static_cast<int>(e.label);
    s.pos.push_back({e.head, label, e.tail});
    if (n < 2) continue;
    for (int side = 0; side < 2; ++side) {
      int h = e.head, t = e.tail;
      for (int tries = 0; tries < 10; ++tries) {
        int cand = rng.uniform_int(n);
        if (side == 0)
          h = cand;
        else
          t = cand;
        if (h != t && !(h == e.head && t == e.tail) && !has_edge(g, h, label, t))
          break;
      }
      if (h != t && !(h == e.head && t == e.tail))
        s.neg.push_back({h, label, t});
    }
  }
  return s;
}

// Soft-margin classification loss over one graph's samples:
// mean over rows of log(1 + exp(-y s)).
inline Var reader_loss_t(Tape& tape, const KnowledgeGraph& g,
                         const std::vector<AuxiliaryPath>& aux,
                         const std::vector<int>& rows, const ReaderVars& rv,
                         const ReaderConfig& cfg, const TrainSample& sample,
                         const Mat* frozen_rel = nullptr) {
  Var V = encode_entities_t(tape, g, aux, rows, rv, cfg, nullptr, frozen_rel);
  Var R = encode_relations_t(rv);
  auto batch_score = [&](const std::vector<std::array<int, 3>>& trips) {
    std::vector<int> hs, rs, ts;
    for (const auto& c : trips) {
      hs.push_back(c[0]);
      rs.push_back(c[1]);
      ts.push_back(c[2]);
    }
    return score_triplets_t(gather_rows(V, hs), gather_rows(R, rs),
                            gather_rows(V, ts), rv, cfg.filters);
  };
  Var s_pos = batch_score(sample.pos);
  Var total = sum_all(softplus(neg(s_pos)));
  int count = static_cast<int>(sample.pos.size());
  if (!sample.neg.empty()) {
    Var s_neg = batch_score(sample.neg);
    total = add(total, sum_all(softplus(s_neg)));
    count += static_cast<int>(sample.neg.size());
  }
  return scale(total, 1.0 / count);
}

// Samples every graph for one epoch and assembles the weighted mean loss.
inline Var reader_epoch_loss_t(Tape& tape, const ReaderVars& rv,
                               const std::vector<const KnowledgeGraph*>& graphs,
                               const std::vector<std::vector<AuxiliaryPath>>& aux,
                               const std::vector<std::vector<int>>& rows,
                               const ReaderConfig& cfg, Rng& erng,
                               const Mat* frozen_rel = nullptr) {
  std::vector<TrainSample> samples;
  long long total_trips = 0;
  for (size_t gi = 0; gi < graphs.size(); ++gi) {
    Rng grng = erng.fork(static_cast<std::uint64_t>(gi));
    samples.push_back(sample_epoch(*graphs[gi], grng));
    total_trips += static_cast<long long>(samples.back().pos.size() +
                                          samples.back().neg.size());
  }
  Var loss;
  bool first = true;
  for (size_t gi = 0; gi < graphs.size(); ++gi) {
    if (samples[gi].pos.empty()) continue;
    double w = static_cast<double>(samples[gi].pos.size() +
                                   samples[gi].neg.size()) /
               static_cast<double>(total_trips);
    Var part = scale(reader_loss_t(tape, *graphs[gi], aux[gi], rows[gi], rv,
                                   cfg, samples[gi], frozen_rel),
                     w);
    loss = first ? part : add(loss, part);
    first = false;
  }
  return loss;
}

namespace detail {
inline void reader_graph_caches(const std::vector<const KnowledgeGraph*>& graphs,
                                const EmbeddingTable& table,
                                const ReaderConfig& cfg,
                                std::vector<std::vector<AuxiliaryPath>>& aux,
                                std::vector<std::vector<int>>& rows) {
  for (const KnowledgeGraph* g : graphs) {
    aux.push_back(collect_auxiliary_edges(*g, cfg.hops));
    rows.push_back(table.rows_for(*g));
  }
}
}  // namespace detail

inline ReaderModel train_link_predictor(
    const std::vector<const KnowledgeGraph*>& graphs,
    const EmbeddingTable& table, const ReaderConfig& cfg,
    std::vector<double>* loss_log = nullptr) {
  bool any_edges = false;
  for (const KnowledgeGraph* g : graphs) any_edges |= !g->edges.empty();
  if (!any_edges) throw DataError("reader: no training edges");

  ReaderModel m;
  m.cfg = cfg;
  m.table = table;
  m.frozen_relations = table.relations;  // pretrained values
  Rng rng(cfg.seed);
  Rng prng = rng.fork(0);
  m.params = init_reader_params(cfg, prng);

  ParamStore ps;
  push_reader_params(ps, m.params, m.table);
  AdamOpt opt(cfg.lr);

  std::vector<std::vector<AuxiliaryPath>> aux;
  std::vector<std::vector<int>> rows;
  detail::reader_graph_caches(graphs, m.table, cfg, aux, rows);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.fork(1 + epoch);
    Tape tape;
    Binder bind(tape);
    ReaderVars rv = bind_reader(bind, ps);
    Var loss =
        reader_epoch_loss_t(tape, rv, graphs, aux, rows, cfg, erng, m.frozen());
    if (loss_log) loss_log->push_back(loss.scalar());
    ps.zero_grad();
    tape.backward(loss);
    bind.collect();
    opt.step(ps);
  }
  pull_reader_params(ps, m.params, m.table);
  return m;
}

// Epoch-0 training loss at freshly initialized parameters, exactly as the
// first iteration of train_link_predictor computes it.
inline double reader_initial_loss(const std::vector<const KnowledgeGraph*>& graphs,
                                  const EmbeddingTable& table,
                                  const ReaderConfig& cfg) {
  Rng rng(cfg.seed);
  Rng prng = rng.fork(0);
  ReaderParams params = init_reader_params(cfg, prng);
  ParamStore ps;
  push_reader_params(ps, params, table);
  std::vector<std::vector<AuxiliaryPath>> aux;
  std::vector<std::vector<int>> rows;
  detail::reader_graph_caches(graphs, table, cfg, aux, rows);
  Tape tape;
  Binder bind(tape);
  ReaderVars rv = bind_reader(bind, ps);
  Rng erng = rng.fork(1);
  const Mat* frozen = cfg.freeze_aux_sums ? &table.relations : nullptr;
  return reader_epoch_loss_t(tape, rv, graphs, aux, rows, cfg, erng, frozen)
      .scalar();
}

// ---------------------------------------------------------------------------
// Link selection, enrichment, evaluation

struct Triplet {
  int head = 0;
  int label = 0;
  int tail = 0;
  double score = 0.0;
};

// Top-scoring unseen candidate per head entity, ties broken by
// (label, tail) ascending.
inline std::vector<Triplet> predict_links(const ReaderModel& m,
                                          const KnowledgeGraph& g) {
  int n = g.N();
  if (n < 2) return {};
  auto aux = collect_auxiliary_edges(g, m.cfg.hops);
  GraphEncoding enc = encode_graph(m, g, aux);

  std::unordered_set<long long> existing;
  auto key = [&](int h, int l, int t) {
    return (static_cast<long long>(h) * kNumRelationLabels + l) * (n + 1LL) + t;
  };
  for (const RelationEdge& e : g.edges)
    existing.insert(key(e.head, static_cast<int>(e.label), e.tail));

  std::vector<Triplet> out;
  for (int h = 0; h < n; ++h) {
    std::vector<std::array<int, 3>> cands;
    for (int l = 0; l < kNumRelationLabels; ++l)
      for (int t = 0; t < n; ++t)
        if (t != h && !existing.count(key(h, l, t)))
          cands.push_back({h, l, t});
    if (cands.empty()) continue;
    auto scores = score_candidates(m, enc, cands);
    int best = 0;
    for (size_t i = 1; i < cands.size(); ++i)
      if (scores[i] > scores[best]) best = static_cast<int>(i);
    // candidates were generated in (label, tail) ascending order, and the
    // strict > above keeps the first of any tie
    if (scores[best] >= m.cfg.min_link_score)
      out.push_back({cands[best][0], cands[best][1], cands[best][2],
                     scores[best]});
  }
  return out;
}

// G = G_I ∪ G_P; node set unchanged, predicted edges marked.
inline KnowledgeGraph enrich_graph(const KnowledgeGraph& g,
                                   const std::vector<Triplet>& links) {
  KnowledgeGraph out = g;
  for (const Triplet& t : links) {
    if (t.head < 0 || t.head >= g.N() || t.tail < 0 || t.tail >= g.N())
      throw DataError("enrich_graph: link references unknown entity");
    RelationEdge e{t.head, t.tail, static_cast<RelationLabel>(t.label)};
    bool dup = false;
    for (const RelationEdge& seen : out.edges)
      if (seen == e) {
        dup = true;
        break;
      }
    if (!dup) {
      e.predicted = true;
      out.edges.push_back(e);
    }
  }
  return out;
}

struct HitsReport {
  std::map<int, double> hits;  // rank threshold -> fraction
  double mean_rank = 0.0;
  int n = 0;
};

// Corruption pool for one test triplet: unique head corruptions then tail
// corruptions, sampled without replacement, capped by availability.
inline std::vector<std::array<int, 3>> corrupted_candidates(
    const KnowledgeGraph& g, const RelationEdge& e, int negatives_per_side,
    Rng& rng) {
  int n = g.N();
  std::vector<std::array<int, 3>> out;
  for (int side = 0; side < 2; ++side) {
    std::vector<int> pool;
    for (int c = 0; c < n; ++c) {
      if (side == 0 && c != e.head && c != e.tail) pool.push_back(c);
      if (side == 1 && c != e.tail && c != e.head) pool.push_back(c);
    }
    rng.shuffle(pool);
    int take = std::min<int>(negatives_per_side, static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) {
      if (side == 0)
        out.push_back({pool[i], static_cast<int>(e.label), e.tail});
      else
        out.push_back({e.head, static_cast<int>(e.label), pool[i]});
    }
  }
  return out;
}

// Expected-hits tie handling: with G candidates strictly above the positive
// and T candidates tied with it (inclusive), the contribution to Hits@N is
// clamp((N - G) / T, 0, 1) — the probability the positive lands in the top N
// under a uniform shuffle of the tied block. Reported rank is the average
// rank G + (T+1)/2.
inline HitsReport evaluate_hits(
    const ReaderModel& m,
    const std::vector<std::pair<const KnowledgeGraph*,
                                std::vector<RelationEdge>>>& tests,
    int negatives_per_side, const std::vector<int>& ranks, std::uint64_t seed) {
  if (negatives_per_side < 1)
    throw UsageError("evaluate_hits: negatives_per_side must be >= 1");
  HitsReport rep;
  for (int r : ranks) rep.hits[r] = 0.0;
  Rng rng(seed);
  std::uint64_t triplet_index = 0;
  for (const auto& [g, edges] : tests) {
    auto aux = collect_auxiliary_edges(*g, m.cfg.hops);
    GraphEncoding enc = encode_graph(m, *g, aux);
    for (const RelationEdge& e : edges) {
      Rng trng = rng.fork(triplet_index++);
      auto cands = corrupted_candidates(*g, e, negatives_per_side, trng);
      cands.insert(cands.begin(),
                   {e.head, static_cast<int>(e.label), e.tail});
      auto scores = score_candidates(m, enc, cands);
      double pos = scores[0];
      int greater = 0, tied = 1;
      for (size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > pos) ++greater;
        else if (scores[i] == pos) ++tied;
      }
      for (int r : ranks) {
        double c = (static_cast<double>(r) - greater) / tied;
        rep.hits[r] += std::clamp(c, 0.0, 1.0);
      }
      rep.mean_rank += greater + (tied + 1) / 2.0;
      ++rep.n;
    }
  }
  if (rep.n == 0) throw DataError("evaluate_hits: empty test set");
  for (auto& [r, v] : rep.hits) v /= rep.n;
  rep.mean_rank /= rep.n;
  return rep;
}

}  // namespace scribe

#pragma once

// Entity/relation embedding table shared across graphs (entities keyed by
// case-folded surface) and its translation-based pretraining.

#include <array>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "scribe/autograd.hpp"
#include "scribe/graph.hpp"
#include "scribe/mat.hpp"
#include "scribe/rng.hpp"

namespace scribe {

// Relation row layout: the 7 labels, then one learned self-relation used for
// entities with no incident triplets.
constexpr int kSelfRelation = kNumRelationLabels;
constexpr int kNumRelationRows = kNumRelationLabels + 1;

struct EmbeddingTable {
  Mat entities;    // num_entities x d; row 0 is the fallback for unseen keys
  Mat relations;   // kNumRelationRows x d
  std::vector<std::string> entity_names;  // row -> key; row 0 = "<unk>"
  std::unordered_map<std::string, int> index;

  int d() const { return entities.cols; }

  int row(const std::string& key) const {
    auto it = index.find(key);
    return it == index.end() ? 0 : it->second;
  }

  int row_for(const EntityNode& n) const { return row(surface_key(n.surface)); }

  // Node id -> table row, for one graph.
  std::vector<int> rows_for(const KnowledgeGraph& g) const {
    std::vector<int> out(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) out[i] = row_for(g.nodes[i]);
    return out;
  }

  bool finite() const { return entities.all_finite() && relations.all_finite(); }
};

// Collects every distinct entity key across the graphs, in first-seen order,
// and initializes vectors ~ N(0, 1/sqrt(d)). Relation row kSelfRelation
// starts at zero (identity translation).
inline EmbeddingTable init_embedding_table(
    const std::vector<const KnowledgeGraph*>& graphs, int d, Rng& rng) {
  EmbeddingTable t;
  t.entity_names.push_back("<unk>");
  t.index.emplace("<unk>", 0);
  for (const KnowledgeGraph* g : graphs)
    for (const EntityNode& n : g->nodes) {
      std::string key = surface_key(n.surface);
      if (t.index.emplace(key, static_cast<int>(t.entity_names.size())).second)
        t.entity_names.push_back(std::move(key));
    }
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  t.entities = Mat::randn(static_cast<int>(t.entity_names.size()), d, rng, s);
  t.relations = Mat::randn(kNumRelationRows, d, rng, s);
  for (int c = 0; c < d; ++c) t.relations(kSelfRelation, c) = 0.0;
  return t;
}

// Distinct (head_row, label, tail_row) triples across the graphs.
inline std::vector<std::array<int, 3>> table_triples(
    const std::vector<const KnowledgeGraph*>& graphs,
    const EmbeddingTable& t) {
  std::vector<std::array<int, 3>> out;
  std::unordered_set<long long> seen;
  for (const KnowledgeGraph* g : graphs) {
    auto rows = t.rows_for(*g);
    for (const RelationEdge& e : g->edges) {
      int h = rows[e.head], tl = rows[e.tail];
      if (h == tl) continue;  // distinct entities that share a surface
      long long key = (static_cast<long long>(h) * kNumRelationRows +
                       static_cast<int>(e.label)) *
                          (t.entities.rows + 1LL) +
                      tl;
      if (seen.insert(key).second)
        out.push_back({h, static_cast<int>(e.label), tl});
    }
  }
  return out;
}

struct TranseConfig {
  int d = 16;
  double margin = 1.0;
  double lr = 0.01;
  int epochs = 200;
  std::uint64_t seed = 0;
  bool normalize = true;  // unit-norm entity rows after each epoch
};

// Translation distance ||h + r - t||_2 per row of a batch.
inline Var translation_distance(Var h, Var r, Var t) {
  Var diff = sub(add(h, r), t);
  Tape& tape = *h.tape;
  Var eps = tape.leaf(Mat::full(h.rows(), 1, 1e-12));
  return scribe::sqrt(add(row_sum(mul(diff, diff)), eps));
}

// Margin ranking over uniform head-or-tail corruption, full-batch gradient
// descent. Deterministic for a given seed.
inline EmbeddingTable pretrain_transe(
    const std::vector<const KnowledgeGraph*>& graphs, TranseConfig cfg) {
  if (cfg.d < 1) throw UsageError("transe: d must be >= 1");
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(0);
  EmbeddingTable table = init_embedding_table(graphs, cfg.d, init_rng);
  auto triples = table_triples(graphs, table);
  if (triples.empty()) throw DataError("transe: no edges to train on");

  int n_ent = table.entities.rows;
  int m = static_cast<int>(triples.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.fork(1 + epoch);
    std::vector<int> ph(m), pr(m), pt(m), nh(m), nr(m), nt(m);
    for (int i = 0; i < m; ++i) {
      ph[i] = triples[i][0];
      pr[i] = triples[i][1];
      pt[i] = triples[i][2];
      nh[i] = ph[i];
      nr[i] = pr[i];
      nt[i] = pt[i];
      // corrupt head or tail with a uniform non-identical entity (row 0 is
      // the unk fallback; skip it)
      int& slot = erng.uniform() < 0.5 ? nh[i] : nt[i];
      if (n_ent > 2) {
        int pick = slot;
        while (pick == slot) pick = 1 + erng.uniform_int(n_ent - 1);
        slot = pick;
      }
    }
    Tape tape;
    Var E = tape.leaf(table.entities, true);
    Var R = tape.leaf(table.relations, true);
    Var dpos = translation_distance(gather_rows(E, ph), gather_rows(R, pr),
                                    gather_rows(E, pt));
    Var dneg = translation_distance(gather_rows(E, nh), gather_rows(R, nr),
                                    gather_rows(E, nt));
    Var margin = tape.leaf(Mat::full(m, 1, cfg.margin));
    Var loss = mean_all(relu(add(margin, sub(dpos, dneg))));
    tape.backward(loss);
    table.entities.add_inplace(tape.grad(E), -cfg.lr);
    table.relations.add_inplace(tape.grad(R), -cfg.lr);
    if (cfg.normalize) {
      for (int r = 0; r < table.entities.rows; ++r) {
        double norm2 = 0.0;
        for (int c = 0; c < cfg.d; ++c)
          norm2 += table.entities(r, c) * table.entities(r, c);
        if (norm2 > 1e-24) {
          double inv = 1.0 / std::sqrt(norm2);
          for (int c = 0; c < cfg.d; ++c) table.entities(r, c) *= inv;
        }
      }
    }
  }
  return table;
}

}  // namespace scribe

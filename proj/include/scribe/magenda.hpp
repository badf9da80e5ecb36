#pragma once

// Merged-instance construction: each document is paired with its k most
// similar neighbors (TF-IDF cosine over lowercased abstract unigrams) and
// their graphs are unioned with surface-based entity deduplication.

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "scribe/graph.hpp"

namespace scribe {

// L2-normalized tf-idf vector; idf = ln((1+N)/(1+df)) + 1. Identical
// documents map to identical vectors (cosine 1), disjoint vocabularies to
// orthogonal ones (cosine 0).
inline std::vector<std::unordered_map<std::string, double>> tfidf_vectors(
    const std::vector<std::vector<std::string>>& docs) {
  size_t n = docs.size();
  std::unordered_map<std::string, int> df;
  std::vector<std::unordered_map<std::string, double>> vecs(n);
  for (size_t i = 0; i < n; ++i) {
    for (const std::string& tok : docs[i]) vecs[i][ascii_lower(tok)] += 1.0;
    for (const auto& [tok, _] : vecs[i]) ++df[tok];
  }
  for (size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (auto& [tok, w] : vecs[i]) {
      w *= std::log((1.0 + n) / (1.0 + df[tok])) + 1.0;
      norm2 += w * w;
    }
    if (norm2 > 0.0) {
      double inv = 1.0 / std::sqrt(norm2);
      for (auto& [_, w] : vecs[i]) w *= inv;
    }
  }
  return vecs;
}

inline double sparse_cosine(const std::unordered_map<std::string, double>& a,
                            const std::unordered_map<std::string, double>& b) {
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  double dot = 0.0;
  for (const auto& [tok, w] : small) {
    auto it = large.find(tok);
    if (it != large.end()) dot += w * it->second;
  }
  return dot;
}

// Union of graphs with entities deduplicated by case-folded surface string
// (first occurrence keeps its surface spelling and type) and edges by
// (head, label, tail). Edges whose endpoints collapse together are dropped.
inline KnowledgeGraph merge_graphs(const std::vector<const KnowledgeGraph*>& parts) {
  KnowledgeGraph out;
  std::unordered_map<std::string, int> by_surface;
  for (const KnowledgeGraph* g : parts) {
    std::vector<int> remap(g->nodes.size());
    for (size_t i = 0; i < g->nodes.size(); ++i) {
      std::string key = surface_key(g->nodes[i].surface);
      auto it = by_surface.find(key);
      if (it == by_surface.end()) {
        int id = out.N();
        by_surface.emplace(std::move(key), id);
        EntityNode node = g->nodes[i];
        node.id = id;
        out.nodes.push_back(std::move(node));
        remap[i] = id;
      } else {
        remap[i] = it->second;
      }
    }
    for (const RelationEdge& e : g->edges) {
      RelationEdge m{remap[e.head], remap[e.tail], e.label};
      if (m.head == m.tail) continue;
      bool dup = false;
      for (const RelationEdge& seen : out.edges)
        if (seen == m) {
          dup = true;
          break;
        }
      if (!dup) out.edges.push_back(m);
    }
  }
  return out;
}

inline std::vector<MergedInstance> build_magenda(
    const std::vector<DocumentInstance>& instances, int k) {
  if (k < 1) throw UsageError("k must be >= 1");
  if (static_cast<int>(instances.size()) <= k)
    throw UsageError("need more than k instances to merge");
  std::vector<std::vector<std::string>> abstracts;
  abstracts.reserve(instances.size());
  for (const auto& inst : instances) {
    if (!inst.abstract)
      throw DataError("instance '" + inst.id +
                      "' has no abstract; similarity undefined");
    abstracts.push_back(*inst.abstract);
  }
  auto vecs = tfidf_vectors(abstracts);

  std::vector<MergedInstance> out;
  out.reserve(instances.size());
  int n = static_cast<int>(instances.size());
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> scored;
    scored.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) scored.emplace_back(sparse_cosine(vecs[i], vecs[j]), j);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // ties: smaller document index
    });
    MergedInstance m;
    m.source_ids.push_back(instances[i].id);
    std::vector<const KnowledgeGraph*> parts = {&instances[i].graph};
    for (int r = 0; r < k; ++r) {
      m.similarity_scores.push_back(scored[r].first);
      m.source_ids.push_back(instances[scored[r].second].id);
      parts.push_back(&instances[scored[r].second].graph);
    }
    m.graph = merge_graphs(parts);
    out.push_back(std::move(m));
  }
  return out;
}

// A merged instance viewed as a generation input: concatenated source titles,
// no target abstract, the union graph.
inline DocumentInstance to_document(const MergedInstance& m,
                                    const std::vector<DocumentInstance>& corpus) {
  std::unordered_map<std::string, const DocumentInstance*> by_id;
  for (const auto& inst : corpus) by_id[inst.id] = &inst;
  DocumentInstance doc;
  for (size_t i = 0; i < m.source_ids.size(); ++i) {
    auto it = by_id.find(m.source_ids[i]);
    if (it == by_id.end())
      throw DataError("merged instance references unknown id '" +
                      m.source_ids[i] + "'");
    if (i) doc.id += "+";
    doc.id += m.source_ids[i];
    doc.title.insert(doc.title.end(), it->second->title.begin(),
                     it->second->title.end());
  }
  doc.graph = m.graph;
  return doc;
}

// Merged-instance JSON lines carry the union graph plus provenance.
inline std::string serialize_merged(const MergedInstance& m) {
  nlohmann::ordered_json j;
  j["source_ids"] = m.source_ids;
  j["similarity_scores"] = m.similarity_scores;
  j["entities"] = nlohmann::ordered_json::array();
  for (const EntityNode& n : m.graph.nodes) {
    nlohmann::ordered_json ent;
    ent["surface"] = n.surface;
    ent["type"] = entity_type_name(n.etype);
    j["entities"].push_back(std::move(ent));
  }
  j["relations"] = nlohmann::ordered_json::array();
  for (const RelationEdge& e : m.graph.edges) {
    nlohmann::ordered_json rel;
    rel["head"] = e.head;
    rel["label"] = relation_label_name(e.label);
    rel["tail"] = e.tail;
    j["relations"].push_back(std::move(rel));
  }
  return j.dump();
}

}  // namespace scribe

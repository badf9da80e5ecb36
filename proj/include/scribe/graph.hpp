#pragma once

// Domain types: typed entity nodes, labeled relation edges, and the
// per-document knowledge graph they form.

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "scribe/common.hpp"

namespace scribe {

enum class EntityType { Task = 0, Metric, Method, Material, Other };
constexpr int kNumEntityTypes = 5;

enum class RelationLabel {
  UsedFor = 0,
  Conjunction,
  FeatureOf,
  PartOf,
  Compare,
  EvaluateFor,
  HyponymOf,
};
constexpr int kNumRelationLabels = 7;

inline const char* entity_type_name(EntityType t) {
  static const char* names[] = {"Task", "Metric", "Method", "Material",
                                "Other"};
  return names[static_cast<int>(t)];
}

inline const char* relation_label_name(RelationLabel l) {
  static const char* names[] = {"Used-for",     "Conjunction", "Feature-of",
                                "Part-of",      "Compare",     "Evaluate-for",
                                "Hyponym-of"};
  return names[static_cast<int>(l)];
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

// Accepts the canonical name in any case, with '-' or '_' or nothing between
// words ("Used-for", "USED-FOR", "used_for", "usedfor").
inline std::optional<EntityType> parse_entity_type(const std::string& raw) {
  std::string s;
  for (char c : ascii_lower(raw))
    if (c != '-' && c != '_' && c != ' ') s += c;
  if (s == "task") return EntityType::Task;
  if (s == "metric") return EntityType::Metric;
  if (s == "method") return EntityType::Method;
  if (s == "material") return EntityType::Material;
  if (s == "other") return EntityType::Other;
  return std::nullopt;
}

inline std::optional<RelationLabel> parse_relation_label(
    const std::string& raw) {
  std::string s;
  for (char c : ascii_lower(raw))
    if (c != '-' && c != '_' && c != ' ') s += c;
  if (s == "usedfor") return RelationLabel::UsedFor;
  if (s == "conjunction") return RelationLabel::Conjunction;
  if (s == "featureof") return RelationLabel::FeatureOf;
  if (s == "partof") return RelationLabel::PartOf;
  if (s == "compare") return RelationLabel::Compare;
  if (s == "evaluatefor") return RelationLabel::EvaluateFor;
  if (s == "hyponymof") return RelationLabel::HyponymOf;
  return std::nullopt;
}

struct EntityNode {
  int id = 0;
  std::vector<std::string> surface;  // token list, non-empty
  EntityType etype = EntityType::Other;
};

struct RelationEdge {
  int head = 0;
  int tail = 0;
  RelationLabel label = RelationLabel::UsedFor;
  bool predicted = false;  // provenance: false = original, true = added later

  // provenance does not participate in identity
  friend bool operator==(const RelationEdge& a, const RelationEdge& b) {
    return a.head == b.head && a.tail == b.tail && a.label == b.label;
  }
};

struct KnowledgeGraph {
  std::vector<EntityNode> nodes;
  std::vector<RelationEdge> edges;

  int N() const { return static_cast<int>(nodes.size()); }
};

// Case-folded surface form, used as the dedup key when merging graphs.
inline std::string surface_key(const std::vector<std::string>& surface) {
  std::string key;
  for (size_t i = 0; i < surface.size(); ++i) {
    if (i) key += ' ';
    key += ascii_lower(surface[i]);
  }
  return key;
}

// Throws DataError on any structural invariant violation. `where` prefixes
// the message (e.g. "line 12: ").
inline void validate_graph(const KnowledgeGraph& g,
                           const std::string& where = "") {
  std::unordered_set<int> ids;
  for (const EntityNode& n : g.nodes) {
    if (!ids.insert(n.id).second)
      throw DataError(where + "duplicate entity id " + std::to_string(n.id));
    if (n.surface.empty())
      throw DataError(where + "entity " + std::to_string(n.id) +
                      " has empty surface");
  }
  std::unordered_set<long long> seen;
  for (const RelationEdge& e : g.edges) {
    if (!ids.count(e.head) || !ids.count(e.tail))
      throw DataError(where + "edge references unknown entity id " +
                      std::to_string(ids.count(e.head) ? e.tail : e.head));
    if (e.head == e.tail)
      throw DataError(where + "self-loop edge on entity " +
                      std::to_string(e.head));
    long long key = (static_cast<long long>(e.head) * kNumRelationLabels +
                     static_cast<int>(e.label)) *
                        (g.N() + 1LL) +
                    e.tail;
    if (!seen.insert(key).second)
      throw DataError(where + "duplicate edge (" + std::to_string(e.head) +
                      ", " + relation_label_name(e.label) + ", " +
                      std::to_string(e.tail) + ")");
  }
}

struct DocumentInstance {
  std::string id;
  std::vector<std::string> title;
  std::optional<std::vector<std::string>> abstract;
  KnowledgeGraph graph;
  // When set, the pipeline skips graph enrichment and feeds the input graph
  // to the writer unchanged.
  bool skip_link_prediction = false;
};

// Pass-through marker: downstream stages leave the graph untouched.
inline DocumentInstance ablate_link_prediction(DocumentInstance inst) {
  inst.skip_link_prediction = true;
  return inst;
}

struct MergedInstance {
  std::vector<std::string> source_ids;        // k+1 ids, primary first
  KnowledgeGraph graph;                       // dedup union of the sources
  std::vector<double> similarity_scores;      // k scores, non-increasing
};

}  // namespace scribe

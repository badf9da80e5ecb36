#pragma once

// JSON-lines ingestion and serialization for document instances, plus a
// one-way adapter from the upstream scientific-abstract release layout.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scribe/graph.hpp"

namespace scribe {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline std::string at_line(int line_no) {
  return "line " + std::to_string(line_no) + ": ";
}

inline std::vector<std::string> token_list(const ordered_json& j,
                                           const char* field, int line_no) {
  if (!j.is_array())
    throw DataError(at_line(line_no) + "field '" + field +
                    "' must be an array of strings");
  std::vector<std::string> out;
  out.reserve(j.size());
  for (const auto& tok : j) {
    if (!tok.is_string())
      throw DataError(at_line(line_no) + "field '" + field +
                      "' must be an array of strings");
    out.push_back(tok.get<std::string>());
  }
  return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

// Splits on ';', trimming surrounding whitespace from each piece.
inline std::vector<std::string> split_semi(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    size_t b = cur.find_first_not_of(" \t");
    if (b == std::string::npos) {
      cur.clear();
      return;
    }
    size_t e = cur.find_last_not_of(" \t");
    out.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char c : s) {
    if (c == ';')
      flush();
    else
      cur += c;
  }
  flush();
  return out;
}

}  // namespace detail

// Parses one normalized record. Unknown fields are rejected so schema drift
// fails loudly instead of being silently dropped on the next save.
inline DocumentInstance parse_instance(const std::string& line, int line_no) {
  using detail::at_line;
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw DataError(at_line(line_no) + "invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw DataError(at_line(line_no) + "record must be an object");
  for (const char* field : {"id", "title", "abstract", "entities", "relations"})
    if (!j.contains(field))
      throw DataError(at_line(line_no) + "missing field '" + field + "'");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "id" && k != "title" && k != "abstract" && k != "entities" &&
        k != "relations")
      throw DataError(at_line(line_no) + "unknown field '" + k + "'");
  }

  DocumentInstance inst;
  if (!j["id"].is_string())
    throw DataError(at_line(line_no) + "field 'id' must be a string");
  inst.id = j["id"].get<std::string>();
  inst.title = detail::token_list(j["title"], "title", line_no);
  if (j["abstract"].is_null()) {
    inst.abstract.reset();
  } else {
    inst.abstract = detail::token_list(j["abstract"], "abstract", line_no);
    if (inst.abstract->empty())
      throw DataError(at_line(line_no) + "field 'abstract' must be null or non-empty");
  }

  if (!j["entities"].is_array())
    throw DataError(at_line(line_no) + "field 'entities' must be an array");
  int next_id = 0;
  for (const auto& ent : j["entities"]) {
    if (!ent.is_object() || !ent.contains("surface") || !ent.contains("type"))
      throw DataError(at_line(line_no) +
                      "field 'entities' entries need 'surface' and 'type'");
    EntityNode node;
    node.id = next_id++;
    node.surface = detail::token_list(ent["surface"], "entities.surface", line_no);
    if (node.surface.empty())
      throw DataError(at_line(line_no) + "field 'entities.surface' must be non-empty");
    if (!ent["type"].is_string())
      throw DataError(at_line(line_no) + "field 'entities.type' must be a string");
    auto et = parse_entity_type(ent["type"].get<std::string>());
    if (!et)
      throw DataError(at_line(line_no) + "unknown entity type '" +
                      ent["type"].get<std::string>() + "'");
    node.etype = *et;
    inst.graph.nodes.push_back(std::move(node));
  }

  if (!j["relations"].is_array())
    throw DataError(at_line(line_no) + "field 'relations' must be an array");
  for (const auto& rel : j["relations"]) {
    if (!rel.is_object() || !rel.contains("head") || !rel.contains("label") ||
        !rel.contains("tail"))
      throw DataError(at_line(line_no) +
                      "field 'relations' entries need 'head', 'label', 'tail'");
    if (!rel["head"].is_number_integer() || !rel["tail"].is_number_integer())
      throw DataError(at_line(line_no) +
                      "field 'relations.head/tail' must be integers");
    RelationEdge edge;
    edge.head = rel["head"].get<int>();
    edge.tail = rel["tail"].get<int>();
    if (!rel["label"].is_string())
      throw DataError(at_line(line_no) + "field 'relations.label' must be a string");
    auto lbl = parse_relation_label(rel["label"].get<std::string>());
    if (!lbl)
      throw DataError(at_line(line_no) + "unknown relation label '" +
                      rel["label"].get<std::string>() + "'");
    edge.label = *lbl;
    inst.graph.edges.push_back(edge);
  }

  validate_graph(inst.graph, detail::at_line(line_no));
  return inst;
}

// Canonical single-line form: fixed field order, compact separators. Loading
// a line produced here and serializing again reproduces it byte for byte.
inline std::string serialize_instance(const DocumentInstance& inst) {
  ordered_json j;
  j["id"] = inst.id;
  j["title"] = inst.title;
  if (inst.abstract)
    j["abstract"] = *inst.abstract;
  else
    j["abstract"] = nullptr;
  j["entities"] = ordered_json::array();
  for (const EntityNode& n : inst.graph.nodes) {
    ordered_json ent;
    ent["surface"] = n.surface;
    ent["type"] = entity_type_name(n.etype);
    j["entities"].push_back(std::move(ent));
  }
  j["relations"] = ordered_json::array();
  for (const RelationEdge& e : inst.graph.edges) {
    ordered_json rel;
    rel["head"] = e.head;
    rel["label"] = relation_label_name(e.label);
    rel["tail"] = e.tail;
    j["relations"].push_back(std::move(rel));
  }
  return j.dump();
}

inline std::vector<DocumentInstance> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<DocumentInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_instance(line, line_no));
  }
  return out;
}

inline void save_dataset(const std::string& path,
                         const std::vector<DocumentInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const DocumentInstance& inst : instances)
    out << serialize_instance(inst) << '\n';
}

// ---------------------------------------------------------------------------
// Upstream adapter.
//
// The upstream release stores one JSON object per line with plain-text
// fields: "title" and "abstract" are space-tokenized strings, "entities" and
// "types" are ';'-separated lists (types wrapped in angle brackets, with
// OtherScientificTerm and Generic both folded into Other), and "relations"
// is a ';'-separated list of "HEAD_IDX LABEL TAIL_IDX" triples. List-valued
// variants of the last three fields are accepted too. The adapter is lossy
// by design: exact-duplicate edges and self-loops are dropped.

namespace detail {

inline std::vector<std::string> string_or_semi_list(const ordered_json& j,
                                                    const char* field,
                                                    int line_no) {
  if (j.is_string()) return split_semi(j.get<std::string>());
  if (j.is_array()) {
    std::vector<std::string> out;
    for (const auto& item : j) {
      if (!item.is_string())
        throw DataError(at_line(line_no) + "field '" + field +
                        "' must be a string or array of strings");
      out.push_back(item.get<std::string>());
    }
    return out;
  }
  throw DataError(at_line(line_no) + "field '" + field +
                  "' must be a string or array of strings");
}

inline EntityType adapt_entity_type(std::string raw, int line_no) {
  // strip decorations like "<task>"
  std::string s;
  for (char c : raw)
    if (c != '<' && c != '>') s += c;
  std::string folded = ascii_lower(s);
  if (folded == "otherscientificterm" || folded == "generic")
    return EntityType::Other;
  auto et = parse_entity_type(s);
  if (!et) throw DataError(at_line(line_no) + "unknown entity type '" + raw + "'");
  return *et;
}

}  // namespace detail

inline DocumentInstance adapt_upstream_instance(const std::string& line,
                                                int line_no,
                                                const std::string& id) {
  using detail::at_line;
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw DataError(at_line(line_no) + "invalid JSON: " + e.what());
  }
  for (const char* field : {"title", "abstract", "entities", "types", "relations"})
    if (!j.contains(field))
      throw DataError(at_line(line_no) + "missing field '" + field + "'");

  DocumentInstance inst;
  inst.id = id;
  if (!j["title"].is_string() || !j["abstract"].is_string())
    throw DataError(at_line(line_no) + "fields 'title'/'abstract' must be strings");
  inst.title = detail::split_ws(j["title"].get<std::string>());
  auto abs_tokens = detail::split_ws(j["abstract"].get<std::string>());
  if (abs_tokens.empty())
    throw DataError(at_line(line_no) + "field 'abstract' must be non-empty");
  inst.abstract = std::move(abs_tokens);

  auto surfaces = detail::string_or_semi_list(j["entities"], "entities", line_no);
  auto types = detail::string_or_semi_list(j["types"], "types", line_no);
  if (surfaces.size() != types.size())
    throw DataError(at_line(line_no) + "field 'types' length " +
                    std::to_string(types.size()) + " != 'entities' length " +
                    std::to_string(surfaces.size()));
  for (size_t i = 0; i < surfaces.size(); ++i) {
    EntityNode node;
    node.id = static_cast<int>(i);
    node.surface = detail::split_ws(surfaces[i]);
    if (node.surface.empty())
      throw DataError(at_line(line_no) + "entity " + std::to_string(i) +
                      " has empty surface");
    node.etype = detail::adapt_entity_type(types[i], line_no);
    inst.graph.nodes.push_back(std::move(node));
  }

  for (const std::string& triple :
       detail::string_or_semi_list(j["relations"], "relations", line_no)) {
    auto parts = detail::split_ws(triple);
    if (parts.size() != 3)
      throw DataError(at_line(line_no) + "relation '" + triple +
                      "' is not 'HEAD LABEL TAIL'");
    RelationEdge edge;
    try {
      edge.head = std::stoi(parts[0]);
      edge.tail = std::stoi(parts[2]);
    } catch (const std::exception&) {
      throw DataError(at_line(line_no) + "relation '" + triple +
                      "' has non-integer endpoints");
    }
    auto lbl = parse_relation_label(parts[1]);
    if (!lbl)
      throw DataError(at_line(line_no) + "unknown relation label '" + parts[1] + "'");
    edge.label = *lbl;
    if (edge.head < 0 || edge.head >= inst.graph.N() || edge.tail < 0 ||
        edge.tail >= inst.graph.N())
      throw DataError(at_line(line_no) + "relation '" + triple +
                      "' references a missing entity");
    if (edge.head == edge.tail) continue;  // dropped
    bool dup = false;
    for (const RelationEdge& seen : inst.graph.edges)
      if (seen == edge) {
        dup = true;
        break;
      }
    if (!dup) inst.graph.edges.push_back(edge);
  }

  validate_graph(inst.graph, detail::at_line(line_no));
  return inst;
}

inline std::vector<DocumentInstance> adapt_upstream_dataset(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<DocumentInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "doc%06d", static_cast<int>(out.size()));
    out.push_back(adapt_upstream_instance(line, line_no, idbuf));
  }
  return out;
}

}  // namespace scribe

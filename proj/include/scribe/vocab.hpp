#pragma once

// Token vocabulary with fixed reserved ids, typed entity placeholders, and
// the placeholder substitution applied to target text around training.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "scribe/graph.hpp"

namespace scribe {

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  Vocabulary() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
  }

  int size() const { return static_cast<int>(id_to_token.size()); }

  bool contains(const std::string& tok) const {
    return token_to_id.count(tok) > 0;
  }

  int add(const std::string& tok) {
    auto it = token_to_id.find(tok);
    if (it != token_to_id.end()) return it->second;
    int id = size();
    id_to_token.push_back(tok);
    token_to_id.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return id_to_token.at(id); }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
  }
};

// The j-th entity of a type gets a dedicated token, e.g. "<method_2>".
inline std::string placeholder_token(EntityType t, int j) {
  return "<" + ascii_lower(entity_type_name(t)) + "_" + std::to_string(j) + ">";
}

inline std::optional<std::pair<EntityType, int>> parse_placeholder(
    const std::string& tok) {
  if (tok.size() < 4 || tok.front() != '<' || tok.back() != '>')
    return std::nullopt;
  size_t us = tok.rfind('_');
  if (us == std::string::npos || us < 2) return std::nullopt;
  auto et = parse_entity_type(tok.substr(1, us - 1));
  if (!et) return std::nullopt;
  int j = 0;
  for (size_t i = us + 1; i + 1 < tok.size(); ++i) {
    if (tok[i] < '0' || tok[i] > '9') return std::nullopt;
    j = j * 10 + (tok[i] - '0');
  }
  if (us + 1 >= tok.size() - 1) return std::nullopt;
  return std::make_pair(*et, j);
}

// Per-type entity ordinal (position among same-type nodes, in node order).
inline std::vector<int> type_ordinals(const KnowledgeGraph& g) {
  std::vector<int> ord(g.nodes.size(), 0);
  int counts[kNumEntityTypes] = {0};
  for (size_t i = 0; i < g.nodes.size(); ++i)
    ord[i] = counts[static_cast<int>(g.nodes[i].etype)]++;
  return ord;
}

// Replaces entity mentions (case-folded token-sequence match) with their
// placeholder tokens. Longest match wins at each position; among equal
// lengths the lowest entity id wins.
inline std::vector<std::string> apply_placeholders(
    const std::vector<std::string>& tokens, const KnowledgeGraph& g) {
  auto ord = type_ordinals(g);
  std::vector<std::string> out;
  size_t p = 0;
  while (p < tokens.size()) {
    int best = -1;
    size_t best_len = 0;
    for (size_t e = 0; e < g.nodes.size(); ++e) {
      const auto& surf = g.nodes[e].surface;
      if (surf.size() <= best_len || p + surf.size() > tokens.size()) continue;
      bool match = true;
      for (size_t k = 0; k < surf.size(); ++k)
        if (ascii_lower(tokens[p + k]) != ascii_lower(surf[k])) {
          match = false;
          break;
        }
      if (match) {
        best = static_cast<int>(e);
        best_len = surf.size();
      }
    }
    if (best >= 0) {
      out.push_back(placeholder_token(g.nodes[best].etype, ord[best]));
      p += best_len;
    } else {
      out.push_back(tokens[p++]);
    }
  }
  return out;
}

// Inverse of apply_placeholders: placeholder tokens become entity surfaces.
// Placeholders with no matching entity are kept verbatim.
inline std::vector<std::string> restore_placeholders(
    const std::vector<std::string>& tokens, const KnowledgeGraph& g) {
  auto ord = type_ordinals(g);
  // (type, ordinal) -> node index
  std::map<std::pair<int, int>, int> lookup;
  for (size_t i = 0; i < g.nodes.size(); ++i)
    lookup[{static_cast<int>(g.nodes[i].etype), ord[i]}] = static_cast<int>(i);
  std::vector<std::string> out;
  for (const std::string& tok : tokens) {
    auto ph = parse_placeholder(tok);
    if (ph) {
      auto it = lookup.find({static_cast<int>(ph->first), ph->second});
      if (it != lookup.end()) {
        const auto& surf = g.nodes[it->second].surface;
        out.insert(out.end(), surf.begin(), surf.end());
        continue;
      }
    }
    out.push_back(tok);
  }
  return out;
}

// Frequency-ranked vocabulary over title and abstract tokens. Reserved
// tokens and entity placeholders (sized by the per-type maxima across the
// corpus) are always present; frequency tokens fill the rest up to max_size,
// ranked by count descending then token ascending.
inline Vocabulary build_vocabulary(const std::vector<DocumentInstance>& instances,
                                   int min_freq, int max_size) {
  if (min_freq < 1) throw UsageError("min_freq must be >= 1");
  if (max_size <= 4) throw UsageError("max_size must be > 4");
  Vocabulary v;

  int type_max[kNumEntityTypes] = {0};
  for (const auto& inst : instances) {
    int counts[kNumEntityTypes] = {0};
    for (const auto& n : inst.graph.nodes)
      ++counts[static_cast<int>(n.etype)];
    for (int t = 0; t < kNumEntityTypes; ++t)
      type_max[t] = std::max(type_max[t], counts[t]);
  }
  for (int t = 0; t < kNumEntityTypes; ++t)
    for (int j = 0; j < type_max[t]; ++j)
      v.add(placeholder_token(static_cast<EntityType>(t), j));

  std::unordered_map<std::string, long long> freq;
  for (const auto& inst : instances) {
    for (const auto& tok : inst.title) ++freq[tok];
    if (inst.abstract)
      for (const auto& tok : *inst.abstract) ++freq[tok];
  }
  std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, count] : ranked) {
    if (v.size() >= max_size) break;
    if (count < min_freq) break;
    v.add(tok);
  }
  return v;
}

}  // namespace scribe

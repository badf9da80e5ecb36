#pragma once

// On-disk checkpoints: a directory with a JSON meta file (schema version,
// checkpoint kind, resolved config snapshot), raw float64 parameter blobs in
// creation order, and the vocabulary. Loads reject version and kind
// mismatches; save -> load round-trips every parameter bit-exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scribe/config.hpp"
#include "scribe/reader.hpp"
#include "scribe/reviewer.hpp"
#include "scribe/writer.hpp"

namespace scribe {

constexpr int kCheckpointVersion = 1;
// Blob header; the trailing digit is the blob layout revision.
constexpr char kBlobMagic[9] = "SCRBPRM1";

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("truncated parameter blob '" + path + "'");
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return x;
}

inline std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw DataError("truncated parameter blob '" + path + "'");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return x;
}

}  // namespace detail

inline void write_param_blob(const std::string& path, const ParamStore& ps) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write parameter blob '" + path + "'");
  out.write(kBlobMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(ps.items().size()));
  for (const auto& p : ps.items()) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(p->value.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(p->value.cols));
    for (double x : p->value.a)
      detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  if (!out) throw DataError("write failed on parameter blob '" + path + "'");
}

// Fills the values of an already-shaped store. Every stored name must match
// a store entry of the same shape, and every store entry must be present.
inline void read_param_blob(const std::string& path, ParamStore& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open parameter blob '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kBlobMagic, 8) != 0)
    throw DataError("'" + path + "' is not a parameter blob");
  std::uint32_t count = detail::get_u32(in, path);
  if (count != ps.items().size())
    throw DataError("parameter blob '" + path + "' holds " +
                    std::to_string(count) + " tensors, expected " +
                    std::to_string(ps.items().size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::get_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw DataError("truncated parameter blob '" + path + "'");
    int rows = static_cast<int>(detail::get_u32(in, path));
    int cols = static_cast<int>(detail::get_u32(in, path));
    Param* p = ps.find(name);
    if (!p)
      throw DataError("parameter blob '" + path + "': unexpected tensor '" +
                      name + "'");
    if (p->value.rows != rows || p->value.cols != cols)
      throw DataError("parameter blob '" + path + "': tensor '" + name +
                      "' is " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " +
                      std::to_string(p->value.rows) + "x" +
                      std::to_string(p->value.cols));
    for (double& x : p->value.a)
      x = std::bit_cast<double>(detail::get_u64(in, path));
  }
}

// ---------------------------------------------------------------------------
// Meta + vocabulary files.

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("write failed on '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline nlohmann::ordered_json parse_json_file(const std::string& path) {
  auto j = nlohmann::ordered_json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw DataError("'" + path + "' is not valid JSON");
  return j;
}

}  // namespace detail

inline void save_checkpoint_meta(const std::string& dir,
                                 const std::string& kind,
                                 const PipelineConfig& cfg) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["schema_version"] = kCheckpointVersion;
  j["kind"] = kind;
  nlohmann::ordered_json conf = nlohmann::ordered_json::object();
  for (const auto& [k, v] : resolved_kv(cfg)) conf[k] = v;
  j["config"] = std::move(conf);
  detail::write_text_file(dir + "/meta.json", j.dump(2) + "\n");
}

// Verifies version + kind and rebuilds the resolved PipelineConfig.
inline PipelineConfig load_checkpoint_meta(const std::string& dir,
                                           const std::string& expected_kind) {
  const std::string path = dir + "/meta.json";
  if (!std::filesystem::exists(path))
    throw DataError("'" + dir + "' is not a checkpoint (no meta.json)");
  auto j = detail::parse_json_file(path);
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw DataError("checkpoint '" + dir + "': missing schema version");
  int ver = j["schema_version"].get<int>();
  if (ver != kCheckpointVersion)
    throw DataError("checkpoint '" + dir + "' has schema version " +
                    std::to_string(ver) + "; this build reads version " +
                    std::to_string(kCheckpointVersion));
  std::string kind = j.value("kind", "");
  if (kind != expected_kind)
    throw DataError("checkpoint '" + dir + "' holds a " +
                    (kind.empty() ? std::string("(unlabeled)") : kind) +
                    " model, expected " + expected_kind);
  PipelineConfig cfg;
  if (!j.contains("config") || !j["config"].is_object())
    throw DataError("checkpoint '" + dir + "': missing config snapshot");
  try {
    for (const auto& [k, v] : j["config"].items())
      set_config_key(cfg, k, v.get<std::string>());
  } catch (const UsageError& e) {
    throw DataError("checkpoint '" + dir + "': bad config snapshot: " +
                    std::string(e.what()));
  }
  return cfg;
}

inline void save_vocab(const std::string& path, const Vocabulary& vocab) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : vocab.id_to_token) arr.push_back(t);
  detail::write_text_file(path, arr.dump() + "\n");
}

inline Vocabulary load_vocab(const std::string& path) {
  auto arr = detail::parse_json_file(path);
  if (!arr.is_array() || arr.size() < 4)
    throw DataError("'" + path + "' is not a vocabulary file");
  Vocabulary v;
  for (size_t i = 0; i < arr.size(); ++i) {
    std::string tok = arr[i].get<std::string>();
    if (i < 4) {
      if (tok != v.id_to_token[i])
        throw DataError("'" + path + "': reserved token slot " +
                        std::to_string(i) + " holds '" + tok + "'");
      continue;
    }
    if (v.add(tok) != static_cast<int>(i))
      throw DataError("'" + path + "': duplicate token '" + tok + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Reader checkpoints: params + embedding table + frozen relation rows +
// entity keys + the relation-label vocabulary.

inline void save_reader_checkpoint(const std::string& dir,
                                   const ReaderModel& m,
                                   PipelineConfig cfg) {
  cfg.reader = m.cfg;
  save_checkpoint_meta(dir, "reader", cfg);
  ParamStore ps;
  push_reader_params(ps, m.params, m.table);
  ps.add("table.frozen_relations", m.frozen_relations);
  write_param_blob(dir + "/params.bin", ps);

  nlohmann::ordered_json ents = nlohmann::ordered_json::array();
  for (const auto& name : m.table.entity_names) ents.push_back(name);
  detail::write_text_file(dir + "/entities.json", ents.dump() + "\n");

  nlohmann::ordered_json rels = nlohmann::ordered_json::array();
  for (int i = 0; i < kNumRelationLabels; ++i)
    rels.push_back(relation_label_name(static_cast<RelationLabel>(i)));
  rels.push_back("<self>");
  detail::write_text_file(dir + "/relations.json", rels.dump() + "\n");
}

inline ReaderModel load_reader_checkpoint(const std::string& dir) {
  PipelineConfig cfg = load_checkpoint_meta(dir, "reader");
  ReaderModel m;
  m.cfg = cfg.reader;

  auto ents = detail::parse_json_file(dir + "/entities.json");
  if (!ents.is_array() || ents.empty())
    throw DataError("checkpoint '" + dir + "': bad entity list");
  for (const auto& e : ents)
    m.table.entity_names.push_back(e.get<std::string>());
  if (m.table.entity_names[0] != "<unk>")
    throw DataError("checkpoint '" + dir + "': entity row 0 must be <unk>");
  for (size_t i = 0; i < m.table.entity_names.size(); ++i)
    if (!m.table.index.emplace(m.table.entity_names[i], static_cast<int>(i))
             .second)
      throw DataError("checkpoint '" + dir + "': duplicate entity key '" +
                      m.table.entity_names[i] + "'");

  auto rels = detail::parse_json_file(dir + "/relations.json");
  if (!rels.is_array() ||
      static_cast<int>(rels.size()) != kNumRelationRows)
    throw DataError("checkpoint '" + dir + "': relation vocabulary must list " +
                    std::to_string(kNumRelationRows) + " labels");
  for (int i = 0; i < kNumRelationLabels; ++i)
    if (rels[i].get<std::string>() !=
        relation_label_name(static_cast<RelationLabel>(i)))
      throw DataError("checkpoint '" + dir + "': relation label " +
                      std::to_string(i) + " is '" +
                      rels[i].get<std::string>() + "', expected '" +
                      relation_label_name(static_cast<RelationLabel>(i)) + "'");

  Rng dummy(0);
  m.params = init_reader_params(m.cfg, dummy);
  m.table.entities =
      Mat(static_cast<int>(m.table.entity_names.size()), m.cfg.d);
  m.table.relations = Mat(kNumRelationRows, m.cfg.d);
  m.frozen_relations = Mat(kNumRelationRows, m.cfg.d);
  ParamStore ps;
  push_reader_params(ps, m.params, m.table);
  ps.add("table.frozen_relations", m.frozen_relations);
  read_param_blob(dir + "/params.bin", ps);
  pull_reader_params(ps, m.params, m.table);
  m.frozen_relations = ps.find("table.frozen_relations")->value;
  return m;
}

// ---------------------------------------------------------------------------
// Writer checkpoints (pretrained and fine-tuned alike).

inline void save_writer_checkpoint(const std::string& dir,
                                   const WriterModel& m, PipelineConfig cfg) {
  cfg.writer = m.cfg;
  save_checkpoint_meta(dir, "writer", cfg);
  ParamStore ps;
  push_writer_params(ps, m.params);
  write_param_blob(dir + "/params.bin", ps);
  save_vocab(dir + "/vocab.json", m.vocab);
}

inline WriterModel load_writer_checkpoint(const std::string& dir) {
  PipelineConfig cfg = load_checkpoint_meta(dir, "writer");
  WriterModel m;
  m.cfg = cfg.writer;
  m.vocab = load_vocab(dir + "/vocab.json");
  Rng dummy(0);
  m.params = init_writer_params(m.cfg, m.vocab.size(), dummy);
  ParamStore ps;
  push_writer_params(ps, m.params);
  read_param_blob(dir + "/params.bin", ps);
  pull_writer_params(ps, m.params);
  return m;
}

// ---------------------------------------------------------------------------
// Reviewer checkpoints: discriminator + alignment head + the alignment
// module's frozen writer copy, sharing one vocabulary.

inline void save_reviewer_checkpoint(const std::string& dir,
                                     const Reviewer& rev, PipelineConfig cfg) {
  cfg.disc = rev.disc.cfg;
  cfg.writer = rev.align.writer.cfg;
  save_checkpoint_meta(dir, "reviewer", cfg);
  {
    ParamStore ps;
    push_disc_params(ps, rev.disc.params);
    write_param_blob(dir + "/disc.bin", ps);
  }
  {
    ParamStore ps;
    push_align_params(ps, rev.align.params);
    write_param_blob(dir + "/align.bin", ps);
  }
  {
    ParamStore ps;
    push_writer_params(ps, rev.align.writer.params);
    write_param_blob(dir + "/writer.bin", ps);
  }
  save_vocab(dir + "/vocab.json", rev.align.writer.vocab);
}

inline Reviewer load_reviewer_checkpoint(const std::string& dir) {
  PipelineConfig cfg = load_checkpoint_meta(dir, "reviewer");
  Vocabulary vocab = load_vocab(dir + "/vocab.json");
  Reviewer rev;
  Rng dummy(0);

  rev.disc = init_discriminator(cfg.disc, vocab.size(), dummy);
  {
    ParamStore ps;
    push_disc_params(ps, rev.disc.params);
    read_param_blob(dir + "/disc.bin", ps);
    pull_disc_params(ps, rev.disc.params);
  }

  rev.align.writer.cfg = cfg.writer;
  rev.align.writer.vocab = vocab;
  rev.align.writer.params =
      init_writer_params(cfg.writer, vocab.size(), dummy);
  {
    ParamStore ps;
    push_writer_params(ps, rev.align.writer.params);
    read_param_blob(dir + "/writer.bin", ps);
    pull_writer_params(ps, rev.align.writer.params);
  }

  rev.align.params = init_align_params(cfg.writer.d, vocab.size(), dummy);
  {
    ParamStore ps;
    push_align_params(ps, rev.align.params);
    read_param_blob(dir + "/align.bin", ps);
    pull_align_params(ps, rev.align.params);
  }
  return rev;
}

}  // namespace scribe

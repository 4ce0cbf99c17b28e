#pragma once

#include <filesystem>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>

#include <unistd.h>
#include <vector>

#include "hiertab/config.hpp"
#include "hiertab/datamodel.hpp"
#include "hiertab/rng.hpp"

namespace hiertab::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("hiertab_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

using RecordList = std::vector<std::pair<std::string, std::string>>;

inline DataStructure make_structure(const std::vector<RecordList>& entities) {
  DataStructure s;
  for (const RecordList& recs : entities) {
    Entity e;
    for (const auto& [k, v] : recs) e.records.push_back({k, v});
    s.entities.push_back(std::move(e));
  }
  return s;
}

inline Example make_example(DataStructure structure, const std::string& text) {
  Example ex;
  ex.structure = std::move(structure);
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) ex.description.tokens.push_back(tok);
  ex.description.tokens.emplace_back(kEosToken);
  return align_copies(std::move(ex));
}

inline ModelConfig tiny_config(Scenario scenario, std::size_t d = 8) {
  ModelConfig c;
  c.scenario = scenario;
  c.encoder.key_embed_dim = 4;
  c.encoder.value_embed_dim = 6;
  c.encoder.hidden_dim = d;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.dropout = 0.0;
  c.decoder_layers = 2;
  return c;
}

/// Random structure over keys K0..K{keys-1} and values "v0".."v{values-1}".
inline DataStructure random_structure(Rng& rng, std::size_t max_entities, std::size_t max_records,
                                      std::size_t keys = 6, std::size_t values = 10) {
  DataStructure s;
  const std::size_t entities = 1 + rng.index(max_entities);
  for (std::size_t i = 0; i < entities; ++i) {
    std::vector<std::size_t> order(keys);
    for (std::size_t k = 0; k < keys; ++k) order[k] = k;
    rng.shuffle(order);
    Entity e;
    const std::size_t n = 1 + rng.index(std::min(max_records, keys));
    for (std::size_t j = 0; j < n; ++j) {
      e.records.push_back({"K" + std::to_string(order[j]), "v" + std::to_string(rng.index(values))});
    }
    s.entities.push_back(std::move(e));
  }
  return s;
}

/// Vocabulary covering keys K0..K{keys-1}, values v0..v{values-1} and `words`.
inline Vocabulary fixture_vocab(std::size_t keys, std::size_t values,
                                std::initializer_list<const char*> words) {
  Dataset ds;
  Example ex;
  Entity e;
  for (std::size_t k = 0; k < keys; ++k) {
    e.records.push_back({"K" + std::to_string(k), "v" + std::to_string(k % values)});
  }
  ex.structure.entities.push_back(e);
  for (std::size_t v = 0; v < values; ++v) ex.description.tokens.push_back("v" + std::to_string(v));
  for (const char* w : words) ex.description.tokens.emplace_back(w);
  ds.examples.push_back(ex);
  Example values_ex;
  Entity ve;
  for (std::size_t v = 0; v < values; ++v) {
    ve.records.push_back({"K0", "v" + std::to_string(v)});
    values_ex.structure.entities.push_back(ve);
    ve.records.clear();
  }
  values_ex.description.tokens.push_back("v0");
  ds.examples.push_back(values_ex);
  return build_vocab(ds, 1);
}

}  // namespace hiertab::testing

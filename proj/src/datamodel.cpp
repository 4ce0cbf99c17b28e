#include "hiertab/datamodel.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "hiertab/error.hpp"

namespace hiertab {

using nlohmann::json;

std::string_view to_string(EntityKind kind) {
  return kind == EntityKind::kTeam ? "team" : "player";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "valid") return Split::kValid;
  if (text == "test") return Split::kTest;
  throw Error("unknown split '" + std::string(text) + "'");
}

const std::string* Entity::find(std::string_view key) const {
  for (const Record& r : records) {
    if (r.key == key) return &r.value;
  }
  return nullptr;
}

std::size_t DataStructure::record_count() const {
  std::size_t n = 0;
  for (const Entity& e : entities) n += e.records.size();
  return n;
}

namespace {

bool is_key_identifier(std::string_view key) {
  if (key.empty() || !(key[0] >= 'A' && key[0] <= 'Z')) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

bool is_single_token(std::string_view value) {
  return !value.empty() && value.find_first_of(" \t\r\n") == std::string_view::npos;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

void reject_unknown_fields(const json& obj, std::initializer_list<std::string_view> allowed,
                           std::string_view where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw Error("unknown field '" + it.key() + "' in " + std::string(where));
    }
  }
}

const json& require(const json& obj, const char* field, std::string_view where) {
  auto it = obj.find(field);
  if (it == obj.end()) throw Error("missing field '" + std::string(field) + "' in " + std::string(where));
  return *it;
}

}  // namespace

void validate_structure(const DataStructure& structure) {
  if (structure.entities.empty()) throw Error("data structure has no entities");
  for (std::size_t i = 0; i < structure.entities.size(); ++i) {
    const Entity& e = structure.entities[i];
    if (e.records.empty()) throw Error("entity " + std::to_string(i) + " has no records");
    std::set<std::string_view> seen;
    for (const Record& r : e.records) {
      if (!is_key_identifier(r.key)) {
        throw Error("entity " + std::to_string(i) + ": key '" + r.key +
                    "' is not an uppercase identifier");
      }
      if (!is_single_token(r.value)) {
        throw Error("entity " + std::to_string(i) + ", key " + r.key +
                    ": value must be a single non-empty token");
      }
      if (!seen.insert(r.key).second) {
        throw Error("entity " + std::to_string(i) + " has duplicate key " + r.key);
      }
    }
  }
}

Example parse_example(std::string_view json_line) {
  json doc;
  try {
    doc = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw Error(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error("expected a JSON object");
  reject_unknown_fields(doc, {"entities", "description"}, "example");

  Example ex;
  const json& entities = require(doc, "entities", "example");
  if (!entities.is_array()) throw Error("'entities' must be an array");
  if (entities.empty()) throw Error("empty entities list");
  for (const json& ent : entities) {
    if (!ent.is_object()) throw Error("entity must be an object");
    reject_unknown_fields(ent, {"kind", "records"}, "entity");
    Entity entity;
    const std::string kind = require(ent, "kind", "entity").get<std::string>();
    if (kind == "team") {
      entity.kind = EntityKind::kTeam;
    } else if (kind == "player") {
      entity.kind = EntityKind::kPlayer;
    } else {
      throw Error("unknown entity kind '" + kind + "'");
    }
    const json& records = require(ent, "records", "entity");
    if (!records.is_array()) throw Error("'records' must be an array");
    for (const json& rec : records) {
      if (!rec.is_object()) throw Error("record must be an object");
      reject_unknown_fields(rec, {"key", "value"}, "record");
      entity.records.push_back({require(rec, "key", "record").get<std::string>(),
                                require(rec, "value", "record").get<std::string>()});
    }
    ex.structure.entities.push_back(std::move(entity));
  }
  validate_structure(ex.structure);

  const json& desc = require(doc, "description", "example");
  if (!desc.is_string()) throw Error("'description' must be a string");
  ex.description.tokens = split_tokens(desc.get<std::string>());
  if (ex.description.tokens.empty()) throw Error("empty description");
  for (const std::string& t : ex.description.tokens) {
    if (t == kEosToken) throw Error("description contains the reserved token <eos>");
  }
  ex.description.tokens.emplace_back(kEosToken);
  return align_copies(std::move(ex));
}

Dataset parse_dataset(const std::filesystem::path& path, Split split) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file " + path.string());
  Dataset ds;
  ds.split = split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ds.examples.push_back(parse_example(line));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.examples.empty()) throw Error("dataset file " + path.string() + " has no examples");
  return ds;
}

std::string serialize_example(const Example& example) {
  json entities = json::array();
  for (const Entity& e : example.structure.entities) {
    json records = json::array();
    for (const Record& r : e.records) records.push_back({{"key", r.key}, {"value", r.value}});
    entities.push_back({{"kind", std::string(to_string(e.kind))}, {"records", records}});
  }
  std::string text;
  for (const std::string& t : example.description.tokens) {
    if (t == kEosToken) continue;
    if (!text.empty()) text += ' ';
    text += t;
  }
  json doc;
  doc["entities"] = std::move(entities);
  doc["description"] = text;
  return doc.dump();
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset file " + path.string());
  for (const Example& ex : dataset.examples) out << serialize_example(ex) << '\n';
}

Example align_copies(Example example) {
  const auto& entities = example.structure.entities;
  example.copy_alignment.assign(example.description.tokens.size(), std::nullopt);
  for (std::size_t t = 0; t < example.description.tokens.size(); ++t) {
    const std::string& tok = example.description.tokens[t];
    if (tok == kEosToken) continue;
    for (std::size_t i = 0; i < entities.size() && !example.copy_alignment[t]; ++i) {
      for (std::size_t j = 0; j < entities[i].records.size(); ++j) {
        if (entities[i].records[j].value == tok) {
          example.copy_alignment[t] = CopyPointer{i, j};
          break;
        }
      }
    }
  }
  return example;
}

std::vector<Record> linearize(const DataStructure& structure) {
  std::vector<Record> out;
  out.reserve(structure.record_count());
  for (const Entity& e : structure.entities) {
    out.insert(out.end(), e.records.begin(), e.records.end());
  }
  return out;
}

std::vector<std::string> key_inventory(const Dataset& dataset) {
  std::set<std::string> keys;
  for (const Example& ex : dataset.examples) {
    for (const Entity& e : ex.structure.entities) {
      for (const Record& r : e.records) keys.insert(r.key);
    }
  }
  return {keys.begin(), keys.end()};
}

// --- Vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* w : {"<pad>", "<unk>", "<bos>", "<eos>"}) {
    add_word(w);
    add_value(w);
  }
  add_key("<ent>");
}

void Vocabulary::add_word(const std::string& w) {
  if (word_index_.emplace(w, words_.size()).second) words_.push_back(w);
}
void Vocabulary::add_value(const std::string& v) {
  if (value_index_.emplace(v, values_.size()).second) values_.push_back(v);
}
void Vocabulary::add_key(const std::string& k) {
  if (key_index_.emplace(k, keys_.size()).second) keys_.push_back(k);
}

std::optional<std::size_t> Vocabulary::find_word(std::string_view word) const {
  auto it = word_index_.find(word);
  if (it == word_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::word_id(std::string_view word) const {
  return find_word(word).value_or(kUnk);
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size()) throw Error("word id " + std::to_string(id) + " out of range");
  return words_[id];
}

std::size_t Vocabulary::value_id(std::string_view value) const {
  auto it = value_index_.find(value);
  return it == value_index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::value(std::size_t id) const {
  if (id >= values_.size()) throw Error("value id " + std::to_string(id) + " out of range");
  return values_[id];
}

std::size_t Vocabulary::key_id(std::string_view key) const {
  auto it = key_index_.find(key);
  if (it == key_index_.end()) throw Error("key '" + std::string(key) + "' not in key inventory");
  return it->second;
}

const std::string& Vocabulary::key(std::size_t id) const {
  if (id >= keys_.size()) throw Error("key id " + std::to_string(id) + " out of range");
  return keys_[id];
}

std::string Vocabulary::to_json() const {
  json doc;
  doc["words"] = words_;
  doc["values"] = values_;
  doc["keys"] = keys_;
  return doc.dump();
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("malformed vocabulary: ") + e.what());
  }
  Vocabulary v;
  v.words_.clear();
  v.values_.clear();
  v.keys_.clear();
  v.word_index_.clear();
  v.value_index_.clear();
  v.key_index_.clear();
  for (const auto& w : doc.at("words")) v.add_word(w.get<std::string>());
  for (const auto& w : doc.at("values")) v.add_value(w.get<std::string>());
  for (const auto& w : doc.at("keys")) v.add_key(w.get<std::string>());
  if (v.word_count() < 4 || v.words_[kEos] != kEosToken || v.key_count() < 1) {
    throw Error("vocabulary is missing its reserved entries");
  }
  return v;
}

Vocabulary build_vocab(const Dataset& train, std::size_t min_freq) {
  std::map<std::string, std::size_t> freq;
  std::set<std::string> values;
  for (const Example& ex : train.examples) {
    for (const std::string& t : ex.description.tokens) {
      if (t != kEosToken) ++freq[t];
    }
    for (const Entity& e : ex.structure.entities) {
      for (const Record& r : e.records) values.insert(r.value);
    }
  }
  Vocabulary v;
  for (const auto& [word, count] : freq) {
    if (count >= min_freq) v.add_word(word);
  }
  for (const std::string& value : values) v.add_value(value);
  for (const std::string& key : key_inventory(train)) v.add_key(key);
  return v;
}

}  // namespace hiertab

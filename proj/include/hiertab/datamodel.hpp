#pragma once

// Hierarchical table input, aligned descriptions, and vocabularies.
//
// A DataStructure is an unordered set of entities, each an unordered set of
// (key, value) records. File order is kept only as the canonical tie-break
// order for copy alignment; nothing in the model may depend on it.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hiertab {

inline constexpr std::string_view kEosToken = "<eos>";

struct Record {
  std::string key;
  std::string value;
  bool operator==(const Record&) const = default;
};

enum class EntityKind { kTeam, kPlayer };

std::string_view to_string(EntityKind kind);

struct Entity {
  EntityKind kind = EntityKind::kPlayer;
  std::vector<Record> records;
  bool operator==(const Entity&) const = default;

  /// Value of the record with this key, if any.
  const std::string* find(std::string_view key) const;
};

struct DataStructure {
  std::vector<Entity> entities;
  bool operator==(const DataStructure&) const = default;

  std::size_t record_count() const;
};

/// Tokens y_1..y_T; after ingestion the last token is always kEosToken.
struct Description {
  std::vector<std::string> tokens;
  bool operator==(const Description&) const = default;
};

struct CopyPointer {
  std::size_t entity = 0;
  std::size_t record = 0;
  bool operator==(const CopyPointer&) const = default;
};

struct Example {
  DataStructure structure;
  Description description;
  /// Same length as description.tokens once aligned; empty before.
  std::vector<std::optional<CopyPointer>> copy_alignment;
  bool operator==(const Example&) const = default;
};

enum class Split { kTrain, kValid, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Dataset {
  std::vector<Example> examples;
  Split split = Split::kTrain;
  bool operator==(const Dataset&) const = default;
};

/// Validates one data structure: non-empty, every entity non-empty, keys are
/// uppercase identifiers unique within their entity, values single tokens.
void validate_structure(const DataStructure& structure);

/// Parses one JSON Lines record (without the trailing newline). Appends the
/// end-of-sequence marker and computes copy alignment.
Example parse_example(std::string_view json_line);

/// Throws hiertab::Error naming the 1-based line number on any violation.
Dataset parse_dataset(const std::filesystem::path& path, Split split);

/// Inverse of parse_example: the end marker is not written.
std::string serialize_example(const Example& example);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

/// Points each description token that equals some record value at the first
/// such record (first entity, then first record, in file order). Idempotent.
Example align_copies(Example example);

/// Records of every entity concatenated in file order.
std::vector<Record> linearize(const DataStructure& structure);

/// Sorted key inventory of a dataset.
std::vector<std::string> key_inventory(const Dataset& dataset);

/// Three disjoint id spaces: description words, record values, record keys.
///
/// Word and value tables reserve ids 0..3 for PAD, UNK, BOS, EOS. The key
/// table reserves id 0 for the entity aggregation token ENT and lists the
/// remaining keys in sorted order.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;
  static constexpr std::size_t kEntKey = 0;

  Vocabulary();

  std::size_t word_count() const { return words_.size(); }
  std::size_t value_count() const { return values_.size(); }
  std::size_t key_count() const { return keys_.size(); }

  /// UNK for unknown words; EOS for kEosToken.
  std::size_t word_id(std::string_view word) const;
  std::optional<std::size_t> find_word(std::string_view word) const;
  const std::string& word(std::size_t id) const;

  std::size_t value_id(std::string_view value) const;
  const std::string& value(std::size_t id) const;

  /// Throws for keys outside the inventory.
  std::size_t key_id(std::string_view key) const;
  const std::string& key(std::size_t id) const;

  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);

  bool operator==(const Vocabulary& other) const {
    return words_ == other.words_ && values_ == other.values_ && keys_ == other.keys_;
  }

  friend Vocabulary build_vocab(const Dataset& train, std::size_t min_freq);

 private:
  void add_word(const std::string& w);
  void add_value(const std::string& v);
  void add_key(const std::string& k);

  std::vector<std::string> words_;
  std::vector<std::string> values_;
  std::vector<std::string> keys_;
  std::map<std::string, std::size_t, std::less<>> word_index_;
  std::map<std::string, std::size_t, std::less<>> value_index_;
  std::map<std::string, std::size_t, std::less<>> key_index_;
};

/// Words seen fewer than min_freq times in train descriptions map to UNK;
/// every train record value and key is kept.
Vocabulary build_vocab(const Dataset& train, std::size_t min_freq);

}  // namespace hiertab

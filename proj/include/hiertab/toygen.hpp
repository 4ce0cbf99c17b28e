#pragma once

// Synthetic basketball-style corpus with templated summaries whose gold
// relations are known exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "hiertab/datamodel.hpp"
#include "hiertab/evaluation.hpp"

namespace hiertab {

struct ToyGenConfig {
  std::size_t train = 2000;
  std::size_t valid = 300;
  std::size_t test = 300;
  std::size_t min_players = 2;
  std::size_t max_players = 6;
  std::size_t min_tokens = 30;
  std::size_t max_tokens = 80;
  std::uint64_t seed = 1;
  ExtractorOptions extractor;
};

void validate(const ToyGenConfig& config);

struct ToySplit {
  Dataset dataset;
  /// Per example, the relations its description states, in mention order.
  std::vector<std::vector<RelationTuple>> relations;
};

struct ToyCorpus {
  ToySplit train, valid, test;
  /// Candidates discarded because the extractor disagreed with the plan or
  /// the length fell outside [min_tokens, max_tokens].
  std::size_t rejected_extraction = 0;
  std::size_t rejected_length = 0;
};

/// Player stat keys, team stat keys, and the name key; 12 distinct keys.
const std::vector<std::string>& toy_player_keys();
const std::vector<std::string>& toy_team_keys();

ToyCorpus generate_corpus(const ToyGenConfig& config);

/// Writes {train,valid,test}.jsonl and {train,valid,test}.relations.jsonl.
void write_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir);

std::string serialize_relations(const std::vector<RelationTuple>& relations);
std::vector<std::vector<RelationTuple>> read_relations(const std::filesystem::path& path);

}  // namespace hiertab

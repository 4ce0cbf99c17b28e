#pragma once

// Run manifests, generation files, attention traces and their SVG plots.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hiertab/datamodel.hpp"
#include "hiertab/decoder.hpp"
#include "hiertab/model.hpp"

namespace hiertab {

/// What a command was asked to do, written as manifest.json before any long
/// work starts and rewritten with output digests when it finishes.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  /// Resolved configuration text: every default plus overrides.
  std::string config;
  std::uint64_t seed = 0;
  std::string scenario;
  std::vector<std::pair<std::string, std::string>> inputs;   // role, path
  std::vector<std::pair<std::string, std::string>> outputs;  // role, path
  bool complete = false;

  /// Paths are digested at serialisation time; missing files digest as "".
  std::string to_json() const;
};

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

/// digest_hex of the file's bytes; throws when it cannot be read.
std::string file_digest(const std::filesystem::path& path);

std::vector<BeamResult> generate_all(const Model& model, const Dataset& dataset,
                                     const BeamOptions& options);

/// One JSON Lines record: {"tokens": [...], "logprob": x, "finished": b}.
std::string generation_line(const BeamResult& result);
void write_generations(const std::filesystem::path& path, const std::vector<BeamResult>& results);
/// Token lists from a generations file; names the line on malformed input.
std::vector<std::vector<std::string>> read_generations(const std::filesystem::path& path);

/// Entity display name: its NAME record, or "entity<i>".
std::string entity_label(const DataStructure& structure, std::size_t entity);

/// Per-step trace for one description, with entity and record labels.
std::string trace_json(const DataStructure& structure, const BeamResult& result);

/// Two bar charts for one decoding step: alpha over entities, and beta over
/// the records of the entity alpha ranks first.
std::string attention_svg(const DataStructure& structure, const AttentionTrace& step);

}  // namespace hiertab

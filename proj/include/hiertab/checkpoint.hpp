#pragma once

// Versioned binary checkpoints.
//
// Layout (all integers and doubles little-endian):
//   magic "HIERTAB\x01", u32 format version
//   str config digest, str model config text, str vocabulary JSON, u64 update
//   u64 parameter count, then per parameter:
//     str name, u64 rows, u64 cols, rows*cols f64 values,
//     u8 has_adam [u64 step, f64 first moments, f64 second moments]
// where str is a u64 byte length followed by the bytes.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hiertab/model.hpp"

namespace hiertab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
  std::optional<AdamState> adam;
  bool operator==(const CheckpointTensor& o) const;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_digest;  // digest_hex(model_config)
  std::string model_config;   // to_config_text(ModelConfig)
  std::string vocab_json;
  std::uint64_t update = 0;
  std::vector<CheckpointTensor> params;
  bool operator==(const Checkpoint&) const = default;
};

Checkpoint snapshot(const Model& model, std::uint64_t update, bool with_adam);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

ModelConfig checkpoint_model_config(const Checkpoint& checkpoint);

/// Copies values (and Adam state, if stored) into a model with the same
/// parameter names and shapes.
void restore(Model& model, const Checkpoint& checkpoint);

/// Builds a model from the checkpoint's own config and vocabulary.
std::unique_ptr<Model> load_model(const Checkpoint& checkpoint);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

/// Per-parameter arithmetic mean; Adam state is dropped and the metadata of
/// the first checkpoint is kept. Names, shapes and config digests must match.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);
Checkpoint average_checkpoints(std::span<const std::filesystem::path> paths);

}  // namespace hiertab

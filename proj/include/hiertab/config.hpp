#pragma once

// Architecture and training hyper-parameters, and their flat key=value text
// form (one `name = value` per line, `#` comments).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace hiertab {

enum class Scenario { kFlat, kHierKv, kHierK };

std::string_view to_string(Scenario scenario);
/// Accepts "flat", "hier-kv", "hier-k".
Scenario parse_scenario(std::string_view text);
bool is_hierarchical(Scenario scenario);

struct EncoderConfig {
  std::size_t key_embed_dim = 20;
  std::size_t value_embed_dim = 300;
  std::size_t hidden_dim = 300;
  std::size_t layers = 2;
  std::size_t heads = 2;
  double dropout = 0.5;
};

struct ModelConfig {
  Scenario scenario = Scenario::kHierK;
  EncoderConfig encoder;
  std::size_t decoder_layers = 2;
  /// Build the hierarchical context from encoded record states h_{i,j}
  /// instead of the raw record embeddings r_{i,j}.
  bool context_over_states = false;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t total_updates = 25000;
  double lr = 1e-3;
  std::size_t lr_halving_period = 10000;
  std::size_t checkpoint_every = 1000;
  std::size_t average_last_k = 5;
  std::uint64_t seed = 1;
  std::size_t min_freq = 1;
  /// Global-norm gradient clipping; 0 disables it.
  double clip_norm = 0.0;
};

struct DecodeConfig {
  std::size_t beam = 5;
  std::size_t max_len = 600;
};

/// Everything a run needs, resolvable from one config file plus overrides.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
};

/// Throws on invalid combinations (hidden_dim % heads, zero sizes, ...).
void validate(const ModelConfig& config);
void validate(const TrainConfig& config);

/// lr(u) = lr0 * 0.5^floor(u / period).
double learning_rate(const TrainConfig& config, std::size_t update);

using ConfigMap = std::map<std::string, std::string, std::less<>>;

ConfigMap parse_config_text(std::string_view text);
ConfigMap read_config_file(const std::filesystem::path& path);

/// Applies every entry of `values` onto `config`; unknown keys throw.
void apply(RunConfig& config, const ConfigMap& values);

/// Canonical text: every field, sorted by name, one per line.
std::string to_config_text(const RunConfig& config);
/// Only the architecture fields (the part a checkpoint depends on).
std::string to_config_text(const ModelConfig& config);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string digest_hex(std::string_view bytes);

}  // namespace hiertab

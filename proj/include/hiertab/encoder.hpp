#pragma once

// Record embeddings, the two-level Transformer encoder, and the flat variant.
//
// No positional information is injected anywhere: records within an entity
// and entities within a structure are sets, and every encoder output is
// equivariant under permutations of its inputs.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiertab/config.hpp"
#include "hiertab/datamodel.hpp"
#include "hiertab/ops.hpp"
#include "hiertab/tensor.hpp"

namespace hiertab {

/// Dropout switch and generator for one forward pass.
struct RunMode {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  static RunMode eval() { return {}; }
  Tensor apply_dropout(const Tensor& x) const;
};

/// Vocabulary ids of one data structure, flattened entity by entity.
struct StructureIds {
  std::vector<std::size_t> key_ids;
  std::vector<std::size_t> value_ids;
  /// offsets[i]..offsets[i+1] are the records of entity i.
  std::vector<std::size_t> offsets;

  std::size_t entity_count() const { return offsets.size() - 1; }
  std::size_t record_count() const { return key_ids.size(); }
};

StructureIds make_structure_ids(const DataStructure& structure, const Vocabulary& vocab);

/// Encoder outputs. Record-level tensors are stacked in StructureIds order
/// (N = total record count rows); entity-level ones have one row per entity.
struct EncodedStructure {
  std::vector<std::size_t> offsets;
  Tensor record_embeddings;  // N x d, r_{i,j}
  Tensor record_states;      // N x d, h_{i,j} (flat: flat encoder outputs)
  Tensor key_embeddings;     // N x key_dim, k_{i,j}
  Tensor entity_aggregates;  // I x d, h_i (hierarchical only)
  Tensor entity_states;      // I x d, e_i (hierarchical only)
  Tensor summary;            // 1 x d, z

  std::size_t entity_count() const { return offsets.size() - 1; }
  std::size_t record_count() const { return offsets.back(); }
};

/// Pre-norm Transformer encoder stack with a final layer norm.
class TransformerEncoder {
 public:
  TransformerEncoder(ParameterStore& store, const std::string& prefix, std::size_t dim,
                     std::size_t layers, std::size_t heads, Rng& rng);

  /// x is n x d. mask is n x n; mask[q * n + k] != 0 lets position q attend
  /// to position k.
  Tensor forward(const Tensor& x, std::span<const std::uint8_t> mask, const RunMode& mode) const;

 private:
  struct Layer {
    Parameter *ln1_gain, *ln1_bias, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Parameter *ln2_gain, *ln2_bias, *w1, *b1, *w2, *b2;
  };
  Tensor self_attention(const Layer& layer, const Tensor& x,
                        std::span<const std::uint8_t> mask) const;

  std::size_t dim_;
  std::size_t heads_;
  std::vector<Layer> layers_;
  Parameter* final_gain_;
  Parameter* final_bias_;
};

class Encoder {
 public:
  Encoder(ParameterStore& store, const ModelConfig& config, std::size_t key_vocab,
          std::size_t value_vocab, Rng& rng);

  /// ReLU(W_r [k; v] + b_r) for every record: N x d.
  Tensor embed_records(std::span<const std::size_t> key_ids,
                       std::span<const std::size_t> value_ids) const;
  /// Single-record form, 1 x d.
  Tensor embed_record(std::size_t key_id, std::size_t value_id) const;
  Tensor key_embeddings(std::span<const std::size_t> key_ids) const;

  /// Runs every entity (records followed by the shared ENT vector) through
  /// the low-level encoder. Returns (record states N x d, aggregates I x d).
  std::pair<Tensor, Tensor> low_level_encode(const Tensor& record_embeddings,
                                             std::span<const std::size_t> offsets,
                                             const RunMode& mode) const;
  /// Returns (entity states I x d, summary 1 x d = mean of entity states).
  std::pair<Tensor, Tensor> high_level_encode(const Tensor& aggregates,
                                              const RunMode& mode) const;
  /// Single encoder over all records; returns (states N x d, mean 1 x d).
  std::pair<Tensor, Tensor> flat_encode(const Tensor& record_embeddings,
                                        const RunMode& mode) const;

  EncodedStructure encode(const StructureIds& ids, const RunMode& mode) const;

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  Parameter* key_table_;
  Parameter* value_table_;
  Parameter* record_w_;
  Parameter* record_b_;
  Parameter* ent_ = nullptr;
  std::unique_ptr<TransformerEncoder> low_;
  std::unique_ptr<TransformerEncoder> high_;
  std::unique_ptr<TransformerEncoder> flat_;
};

}  // namespace hiertab

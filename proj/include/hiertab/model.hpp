#pragma once

// The full network: encoder, attention and decoder over one parameter store.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "hiertab/attention.hpp"
#include "hiertab/config.hpp"
#include "hiertab/datamodel.hpp"
#include "hiertab/decoder.hpp"
#include "hiertab/encoder.hpp"
#include "hiertab/tensor.hpp"

namespace hiertab {

/// Ids and supervision for one example, computed once per dataset.
struct PreparedExample {
  StructureIds ids;
  TargetSequence targets;
};

class Model {
 public:
  /// Parameters are created in a fixed order from Rng(seed).
  Model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const Encoder& encoder() const { return *encoder_; }
  const Attention& attention() const { return *attention_; }
  const Decoder& decoder() const { return *decoder_; }

  PreparedExample prepare(const Example& example) const;
  EncodedStructure encode(const DataStructure& structure, const RunMode& mode) const;

  /// Mean per-token NLL.
  Tensor loss(const PreparedExample& example, const RunMode& mode) const;
  Tensor loss(const Example& example, const RunMode& mode) const;
  /// Per-example losses with the decoder run over the whole batch at once.
  std::vector<Tensor> batch_loss(std::span<const PreparedExample* const> examples,
                                 const RunMode& mode) const;

  BeamResult generate(const DataStructure& structure, const BeamOptions& options) const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Attention> attention_;
  std::unique_ptr<Decoder> decoder_;
};

}  // namespace hiertab

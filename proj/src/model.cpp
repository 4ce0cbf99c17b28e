#include "hiertab/model.hpp"

namespace hiertab {

Model::Model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  validate(config_);
  Rng rng(seed);
  encoder_ = std::make_unique<Encoder>(store_, config_, vocab_.key_count(), vocab_.value_count(),
                                       rng);
  attention_ = std::make_unique<Attention>(store_, config_, rng);
  decoder_ = std::make_unique<Decoder>(store_, config_, vocab_.word_count(), *attention_, rng);
}

PreparedExample Model::prepare(const Example& example) const {
  return {make_structure_ids(example.structure, vocab_), make_targets(example, vocab_)};
}

EncodedStructure Model::encode(const DataStructure& structure, const RunMode& mode) const {
  return encoder_->encode(make_structure_ids(structure, vocab_), mode);
}

Tensor Model::loss(const PreparedExample& example, const RunMode& mode) const {
  const EncodedStructure enc = encoder_->encode(example.ids, mode);
  return decoder_->nll_loss(example.targets, enc, mode);
}

Tensor Model::loss(const Example& example, const RunMode& mode) const {
  return loss(prepare(example), mode);
}

std::vector<Tensor> Model::batch_loss(std::span<const PreparedExample* const> examples,
                                      const RunMode& mode) const {
  std::vector<EncodedStructure> encs;
  encs.reserve(examples.size());
  std::vector<const TargetSequence*> targets;
  for (const PreparedExample* ex : examples) {
    encs.push_back(encoder_->encode(ex->ids, mode));
    targets.push_back(&ex->targets);
  }
  std::vector<const EncodedStructure*> enc_ptrs;
  for (const EncodedStructure& e : encs) enc_ptrs.push_back(&e);
  return decoder_->batch_nll_loss(targets, enc_ptrs, mode);
}

BeamResult Model::generate(const DataStructure& structure, const BeamOptions& options) const {
  NoGradGuard no_grad;
  const EncodedStructure enc = encode(structure, RunMode::eval());
  return decoder_->beam_search(enc, make_extended_vocab(structure, vocab_), vocab_, options);
}

}  // namespace hiertab

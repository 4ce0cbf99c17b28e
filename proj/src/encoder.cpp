#include "hiertab/encoder.hpp"

#include <cmath>

#include "hiertab/error.hpp"

namespace hiertab {

using ops::Axis;

Tensor RunMode::apply_dropout(const Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (rng == nullptr) throw Error("training-mode forward pass needs an rng");
  return ops::dropout(x, dropout, true, *rng);
}

StructureIds make_structure_ids(const DataStructure& structure, const Vocabulary& vocab) {
  validate_structure(structure);
  StructureIds ids;
  ids.offsets.push_back(0);
  for (const Entity& e : structure.entities) {
    for (const Record& r : e.records) {
      ids.key_ids.push_back(vocab.key_id(r.key));
      ids.value_ids.push_back(vocab.value_id(r.value));
    }
    ids.offsets.push_back(ids.key_ids.size());
  }
  return ids;
}

// --- Transformer ----------------------------------------------------------

TransformerEncoder::TransformerEncoder(ParameterStore& store, const std::string& prefix,
                                       std::size_t dim, std::size_t layers, std::size_t heads,
                                       Rng& rng)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw Error(prefix + ": dim " + std::to_string(dim) + " not divisible by heads " +
                std::to_string(heads));
  }
  const std::size_t inner = 2 * dim;
  auto ones = [](std::size_t n) { return std::vector<double>(n, 1.0); };
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l) + ".";
    Layer L{};
    L.ln1_gain = &store.add(p + "ln1.gain", {1, dim}, ones(dim));
    L.ln1_bias = &store.add(p + "ln1.bias", {1, dim}, Init::kZeros, rng);
    L.wq = &store.add(p + "Wq", {dim, dim}, Init::kGlorotUniform, rng);
    L.bq = &store.add(p + "bq", {1, dim}, Init::kZeros, rng);
    L.wk = &store.add(p + "Wk", {dim, dim}, Init::kGlorotUniform, rng);
    L.bk = &store.add(p + "bk", {1, dim}, Init::kZeros, rng);
    L.wv = &store.add(p + "Wv", {dim, dim}, Init::kGlorotUniform, rng);
    L.bv = &store.add(p + "bv", {1, dim}, Init::kZeros, rng);
    L.wo = &store.add(p + "Wo", {dim, dim}, Init::kGlorotUniform, rng);
    L.bo = &store.add(p + "bo", {1, dim}, Init::kZeros, rng);
    L.ln2_gain = &store.add(p + "ln2.gain", {1, dim}, ones(dim));
    L.ln2_bias = &store.add(p + "ln2.bias", {1, dim}, Init::kZeros, rng);
    L.w1 = &store.add(p + "ffn.W1", {dim, inner}, Init::kGlorotUniform, rng);
    L.b1 = &store.add(p + "ffn.b1", {1, inner}, Init::kZeros, rng);
    L.w2 = &store.add(p + "ffn.W2", {inner, dim}, Init::kGlorotUniform, rng);
    L.b2 = &store.add(p + "ffn.b2", {1, dim}, Init::kZeros, rng);
    layers_.push_back(L);
  }
  final_gain_ = &store.add(prefix + ".ln.gain", {1, dim}, ones(dim));
  final_bias_ = &store.add(prefix + ".ln.bias", {1, dim}, Init::kZeros, rng);
}

Tensor TransformerEncoder::self_attention(const Layer& L, const Tensor& x,
                                          std::span<const std::uint8_t> mask) const {
  const Tensor q = ops::linear(x, L.wq->tensor(), L.bq->tensor());
  const Tensor k = ops::linear(x, L.wk->tensor(), L.bk->tensor());
  const Tensor v = ops::linear(x, L.wv->tensor(), L.bv->tensor());
  const std::size_t head_dim = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t b = h * head_dim, e = b + head_dim;
    const Tensor qh = heads_ == 1 ? q : ops::slice_cols(q, b, e);
    const Tensor kh = heads_ == 1 ? k : ops::slice_cols(k, b, e);
    const Tensor vh = heads_ == 1 ? v : ops::slice_cols(v, b, e);
    const Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
    heads.push_back(ops::matmul(ops::masked_softmax(scores, mask), vh));
  }
  const Tensor merged = heads_ == 1 ? heads.front() : ops::concat(heads, Axis::kCols);
  return ops::linear(merged, L.wo->tensor(), L.bo->tensor());
}

Tensor TransformerEncoder::forward(const Tensor& x, std::span<const std::uint8_t> mask,
                                   const RunMode& mode) const {
  if (x.cols() != dim_) throw Error("transformer input has width " + std::to_string(x.cols()) +
                                    ", expected " + std::to_string(dim_));
  if (mask.size() != x.rows() * x.rows()) throw Error("transformer mask has the wrong size");
  Tensor h = x;
  for (const Layer& L : layers_) {
    const Tensor a = ops::layer_norm(h, L.ln1_gain->tensor(), L.ln1_bias->tensor());
    h = ops::add(h, mode.apply_dropout(self_attention(L, a, mask)));
    const Tensor b = ops::layer_norm(h, L.ln2_gain->tensor(), L.ln2_bias->tensor());
    const Tensor f = ops::linear(ops::relu(ops::linear(b, L.w1->tensor(), L.b1->tensor())),
                                 L.w2->tensor(), L.b2->tensor());
    h = ops::add(h, mode.apply_dropout(f));
  }
  return ops::layer_norm(h, final_gain_->tensor(), final_bias_->tensor());
}

// --- Encoder ----------------------------------------------------------------

Encoder::Encoder(ParameterStore& store, const ModelConfig& config, std::size_t key_vocab,
                 std::size_t value_vocab, Rng& rng)
    : config_(config) {
  validate(config);
  const EncoderConfig& e = config.encoder;
  const std::size_t d = e.hidden_dim;
  key_table_ = &store.add("encoder.key_embed", {key_vocab, e.key_embed_dim},
                          Init::kEmbeddingNormal, rng);
  value_table_ = &store.add("encoder.value_embed", {value_vocab, e.value_embed_dim},
                            Init::kEmbeddingNormal, rng);
  record_w_ = &store.add("encoder.record.W", {e.key_embed_dim + e.value_embed_dim, d},
                         Init::kGlorotUniform, rng);
  record_b_ = &store.add("encoder.record.b", {1, d}, Init::kZeros, rng);
  if (is_hierarchical(config.scenario)) {
    ent_ = &store.add("encoder.ent", {1, d}, Init::kEmbeddingNormal, rng);
    low_ = std::make_unique<TransformerEncoder>(store, "encoder.low", d, e.layers, e.heads, rng);
    high_ = std::make_unique<TransformerEncoder>(store, "encoder.high", d, e.layers, e.heads, rng);
  } else {
    flat_ = std::make_unique<TransformerEncoder>(store, "encoder.flat", d, e.layers, e.heads, rng);
  }
}

Tensor Encoder::key_embeddings(std::span<const std::size_t> key_ids) const {
  return ops::embedding_lookup(key_table_->tensor(), key_ids);
}

Tensor Encoder::embed_records(std::span<const std::size_t> key_ids,
                              std::span<const std::size_t> value_ids) const {
  if (key_ids.size() != value_ids.size() || key_ids.empty()) {
    throw Error("embed_records: need matching, non-empty key and value id lists");
  }
  const std::vector<Tensor> parts{key_embeddings(key_ids),
                                  ops::embedding_lookup(value_table_->tensor(), value_ids)};
  return ops::relu(
      ops::linear(ops::concat(parts, Axis::kCols), record_w_->tensor(), record_b_->tensor()));
}

Tensor Encoder::embed_record(std::size_t key_id, std::size_t value_id) const {
  const std::size_t k[] = {key_id};
  const std::size_t v[] = {value_id};
  return embed_records(k, v);
}

std::pair<Tensor, Tensor> Encoder::low_level_encode(const Tensor& records,
                                                    std::span<const std::size_t> offsets,
                                                    const RunMode& mode) const {
  if (!low_) throw Error("low_level_encode requires a hierarchical scenario");
  if (offsets.size() < 2 || offsets.back() != records.rows()) {
    throw Error("low_level_encode: offsets do not match " + records.shape().to_string());
  }
  const std::size_t entities = offsets.size() - 1;
  const std::size_t n = records.rows() + entities;
  std::vector<Tensor> rows;
  rows.reserve(2 * entities);
  std::vector<std::uint8_t> mask(n * n, 0);
  std::vector<std::size_t> record_pos, ent_pos;
  for (std::size_t i = 0; i < entities; ++i) {
    if (offsets[i + 1] <= offsets[i]) {
      throw Error("entity " + std::to_string(i) + " has no records");
    }
    rows.push_back(ops::slice_rows(records, offsets[i], offsets[i + 1]));
    rows.push_back(ent_->tensor());
    const std::size_t begin = offsets[i] + i;
    const std::size_t end = offsets[i + 1] + i + 1;  // one past ENT
    for (std::size_t q = begin; q < end; ++q) {
      for (std::size_t k = begin; k < end; ++k) mask[q * n + k] = 1;
    }
    for (std::size_t p = begin; p + 1 < end; ++p) record_pos.push_back(p);
    ent_pos.push_back(end - 1);
  }
  const Tensor out = low_->forward(ops::concat(rows, Axis::kRows), mask, mode);
  return {ops::embedding_lookup(out, record_pos), ops::embedding_lookup(out, ent_pos)};
}

std::pair<Tensor, Tensor> Encoder::high_level_encode(const Tensor& aggregates,
                                                     const RunMode& mode) const {
  if (!high_) throw Error("high_level_encode requires a hierarchical scenario");
  if (aggregates.rows() == 0) throw Error("high_level_encode: no entities");
  const std::vector<std::uint8_t> mask(aggregates.rows() * aggregates.rows(), 1);
  Tensor states = high_->forward(aggregates, mask, mode);
  Tensor z = ops::mean_pool(states, Axis::kRows);
  return {std::move(states), std::move(z)};
}

std::pair<Tensor, Tensor> Encoder::flat_encode(const Tensor& records,
                                               const RunMode& mode) const {
  if (!flat_) throw Error("flat_encode requires the flat scenario");
  if (records.rows() == 0) throw Error("flat_encode: no records");
  const std::vector<std::uint8_t> mask(records.rows() * records.rows(), 1);
  Tensor states = flat_->forward(records, mask, mode);
  Tensor z = ops::mean_pool(states, Axis::kRows);
  return {std::move(states), std::move(z)};
}

EncodedStructure Encoder::encode(const StructureIds& ids, const RunMode& mode) const {
  EncodedStructure enc;
  enc.offsets = ids.offsets;
  enc.record_embeddings = embed_records(ids.key_ids, ids.value_ids);
  enc.key_embeddings = key_embeddings(ids.key_ids);
  if (is_hierarchical(config_.scenario)) {
    auto [states, aggregates] = low_level_encode(enc.record_embeddings, ids.offsets, mode);
    enc.record_states = std::move(states);
    enc.entity_aggregates = std::move(aggregates);
    auto [entity_states, z] = high_level_encode(enc.entity_aggregates, mode);
    enc.entity_states = std::move(entity_states);
    enc.summary = std::move(z);
  } else {
    auto [states, z] = flat_encode(enc.record_embeddings, mode);
    enc.record_states = std::move(states);
    enc.summary = std::move(z);
  }
  return enc;
}

}  // namespace hiertab

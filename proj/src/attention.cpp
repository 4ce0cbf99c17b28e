#include "hiertab/attention.hpp"

#include "hiertab/error.hpp"

namespace hiertab {

Attention::Attention(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : config_(config) {
  const std::size_t d = config.encoder.hidden_dim;
  switch (config.scenario) {
    case Scenario::kFlat:
      w_flat_ = &store.add("attention.W_flat", {d, d}, Init::kGlorotUniform, rng);
      break;
    case Scenario::kHierKv:
      w_alpha_ = &store.add("attention.W_alpha", {d, d}, Init::kGlorotUniform, rng);
      w_beta_ = &store.add("attention.W_beta", {d, d}, Init::kGlorotUniform, rng);
      break;
    case Scenario::kHierK:
      w_alpha_ = &store.add("attention.W_alpha", {d, d}, Init::kGlorotUniform, rng);
      w_key_ = &store.add("attention.W_key", {d, config.encoder.key_embed_dim},
                          Init::kGlorotUniform, rng);
      break;
  }
}

Tensor Attention::entity_scores(const Tensor& d_t, const EncodedStructure& enc) const {
  if (!w_alpha_) throw Error("entity_scores requires a hierarchical scenario");
  const Tensor query = ops::matmul(d_t, w_alpha_->tensor());
  return ops::softmax(ops::matmul_nt(query, enc.entity_states), ops::Axis::kCols);
}

Tensor Attention::record_scores_kv(const Tensor& d_t, const EncodedStructure& enc) const {
  if (!w_beta_) throw Error("record_scores_kv requires the hier-kv scenario");
  const Tensor query = ops::matmul(d_t, w_beta_->tensor());
  return ops::segment_softmax(ops::matmul_nt(query, enc.record_states), enc.offsets);
}

Tensor Attention::record_scores_k(const Tensor& d_t, const EncodedStructure& enc) const {
  if (!w_key_) throw Error("record_scores_k requires the hier-k scenario");
  const Tensor query = ops::matmul(d_t, w_key_->tensor());
  return ops::segment_softmax(ops::matmul_nt(query, enc.key_embeddings), enc.offsets);
}

std::pair<Tensor, Tensor> Attention::hierarchical_context(
    const Tensor& alpha, const Tensor& beta, const Tensor& values,
    std::span<const std::size_t> offsets) const {
  if (values.rows() != beta.cols()) {
    throw Error("hierarchical_context: beta " + beta.shape().to_string() + " vs values " +
                values.shape().to_string());
  }
  Tensor weights = ops::segment_scale(beta, alpha, offsets);
  Tensor context = ops::matmul(weights, values);
  return {std::move(weights), std::move(context)};
}

std::pair<Tensor, Tensor> Attention::flat_context(const Tensor& d_t,
                                                  const EncodedStructure& enc) const {
  if (!w_flat_) throw Error("flat_context requires the flat scenario");
  const Tensor query = ops::matmul(d_t, w_flat_->tensor());
  Tensor weights = ops::softmax(ops::matmul_nt(query, enc.record_states), ops::Axis::kCols);
  Tensor context = ops::matmul(weights, enc.record_states);
  return {std::move(weights), std::move(context)};
}

std::vector<double> segment_mass(std::span<const double> weights,
                                 std::span<const std::size_t> offsets) {
  std::vector<double> mass(offsets.size() - 1, 0.0);
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) mass[i] += weights[k];
  }
  return mass;
}

AttentionOutput Attention::attend(const Tensor& d_t, const EncodedStructure& enc) const {
  AttentionOutput out;
  if (config_.scenario == Scenario::kFlat) {
    auto [weights, context] = flat_context(d_t, enc);
    // Entity/record split of the flat distribution, for analysis only.
    std::vector<double> alpha = segment_mass(weights.values(), enc.offsets);
    std::vector<double> beta(weights.values().begin(), weights.values().end());
    for (std::size_t i = 0; i + 1 < enc.offsets.size(); ++i) {
      const double size = static_cast<double>(enc.offsets[i + 1] - enc.offsets[i]);
      for (std::size_t k = enc.offsets[i]; k < enc.offsets[i + 1]; ++k) {
        beta[k] = alpha[i] > 0.0 ? beta[k] / alpha[i] : 1.0 / size;
      }
    }
    out.alpha = Tensor::row(std::move(alpha));
    out.beta = Tensor::row(std::move(beta));
    out.weights = std::move(weights);
    out.context = std::move(context);
    return out;
  }
  out.alpha = entity_scores(d_t, enc);
  out.beta = config_.scenario == Scenario::kHierK ? record_scores_k(d_t, enc)
                                                  : record_scores_kv(d_t, enc);
  const Tensor& values = config_.context_over_states ? enc.record_states : enc.record_embeddings;
  auto [weights, context] = hierarchical_context(out.alpha, out.beta, values, enc.offsets);
  out.weights = std::move(weights);
  out.context = std::move(context);
  return out;
}

}  // namespace hiertab

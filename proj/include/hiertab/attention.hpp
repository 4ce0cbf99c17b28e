#pragma once

// Decoder-side attention over an encoded structure.
//
// All scores are bilinear, d_t^T W x, with no 1/sqrt(d) scaling:
//   alpha_i      ∝ exp(d_t W_alpha e_i)           over entities
//   beta_{i,j}   ∝ exp(d_t W_beta  h_{i,j})       over records of entity i
//   beta^_{i,j}  ∝ exp(d_t W_key   k_{i,j})       key-guided variant
//   c_t = sum_i alpha_i sum_j beta_{i,j} r_{i,j}
// The flat scenario uses one softmax over all records and their flat states.

#include <cstddef>
#include <vector>

#include "hiertab/config.hpp"
#include "hiertab/encoder.hpp"
#include "hiertab/tensor.hpp"

namespace hiertab {

struct AttentionOutput {
  /// 1 x I. For the flat scenario: per-entity mass of the flat weights.
  Tensor alpha;
  /// 1 x N, normalised within each entity segment.
  Tensor beta;
  /// 1 x N, alpha_i * beta_{i,j}; the copy distribution over records.
  Tensor weights;
  /// 1 x d.
  Tensor context;
};

/// One decoding step's attention, detached to plain numbers.
struct AttentionTrace {
  std::size_t step = 0;
  std::string token;
  std::vector<double> alpha;
  std::vector<std::vector<double>> beta;
  std::vector<double> context;
  std::vector<double> copy_dist;
  double switch_prob = 0.0;
};

class Attention {
 public:
  Attention(ParameterStore& store, const ModelConfig& config, Rng& rng);

  /// softmax_i(d_t W_alpha e_i).
  Tensor entity_scores(const Tensor& d_t, const EncodedStructure& enc) const;
  /// Per-entity softmax of d_t W_beta h_{i,j}.
  Tensor record_scores_kv(const Tensor& d_t, const EncodedStructure& enc) const;
  /// Per-entity softmax of d_t W_key k_{i,j}.
  Tensor record_scores_k(const Tensor& d_t, const EncodedStructure& enc) const;
  /// Returns (alpha (x) beta weights, context) against `values` (N x d).
  std::pair<Tensor, Tensor> hierarchical_context(const Tensor& alpha, const Tensor& beta,
                                                 const Tensor& values,
                                                 std::span<const std::size_t> offsets) const;
  /// Returns (weights 1 x N, context) under one softmax over all records.
  std::pair<Tensor, Tensor> flat_context(const Tensor& d_t, const EncodedStructure& enc) const;

  /// Full attention for the configured scenario.
  AttentionOutput attend(const Tensor& d_t, const EncodedStructure& enc) const;

  Scenario scenario() const { return config_.scenario; }

 private:
  ModelConfig config_;
  Parameter* w_alpha_ = nullptr;
  Parameter* w_beta_ = nullptr;
  Parameter* w_key_ = nullptr;
  Parameter* w_flat_ = nullptr;
};

/// Sum of flat weights per entity segment (plain numbers).
std::vector<double> segment_mass(std::span<const double> weights,
                                 std::span<const std::size_t> offsets);

}  // namespace hiertab

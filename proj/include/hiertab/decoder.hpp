#pragma once

// Stacked-LSTM decoder with input feeding, scenario attention, a supervised
// copy switch, the per-token NLL objective, and beam search.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiertab/attention.hpp"
#include "hiertab/config.hpp"
#include "hiertab/datamodel.hpp"
#include "hiertab/encoder.hpp"
#include "hiertab/tensor.hpp"

namespace hiertab {

struct DecoderState {
  std::vector<Tensor> hidden;  // per layer, 1 x d
  std::vector<Tensor> cell;    // per layer, 1 x d
  Tensor context;              // c_{t-1}, 1 x d
  std::size_t step = 1;
};

struct StepOutput {
  Tensor gen_dist;     // 1 x V
  Tensor copy_dist;    // 1 x N
  Tensor switch_prob;  // 1 x 1
  AttentionOutput attention;
  Tensor hidden;       // d_t
};

/// Teacher-forcing inputs and supervision for one description.
struct TargetSequence {
  std::vector<std::size_t> inputs;   // BOS, y_1 .. y_{T-1} as word ids
  std::vector<std::size_t> targets;  // y_1 .. y_T as word ids
  /// Flat record index (StructureIds order) for copied tokens.
  std::vector<std::optional<std::size_t>> copy_index;
};

TargetSequence make_targets(const Example& example, const Vocabulary& vocab);

/// Output id space for one structure: word ids [0, V) plus one extra id per
/// distinct record value missing from the word vocabulary.
struct ExtendedVocab {
  std::size_t word_count = 0;
  std::vector<std::size_t> record_token;  // per record, its output id
  std::vector<std::string> oov_values;    // id word_count + k

  std::size_t size() const { return word_count + oov_values.size(); }
  std::string token(std::size_t id, const Vocabulary& vocab) const;
  /// Word id fed back to the decoder (UNK for copied out-of-vocabulary values).
  std::size_t input_id(std::size_t id) const;
};

ExtendedVocab make_extended_vocab(const DataStructure& structure, const Vocabulary& vocab);

/// P(w) = (1 - s) gen[w] + s * sum over records valued w of copy[k].
std::vector<double> mixture_distribution(const StepOutput& step, const ExtendedVocab& ext);

struct BeamOptions {
  std::size_t beam_size = 5;
  std::size_t max_len = 600;
};

struct BeamResult {
  std::vector<std::size_t> ids;     // output ids, end marker excluded
  std::vector<std::string> tokens;  // end marker excluded
  double logprob = 0.0;             // includes the end marker when finished
  bool finished = false;
  std::vector<AttentionTrace> trace;  // one entry per emitted id (end included)
};

class Decoder {
 public:
  Decoder(ParameterStore& store, const ModelConfig& config, std::size_t word_vocab,
          const Attention& attention, Rng& rng);

  /// hidden and cell of every layer = tanh(W z + b), context = 0, step = 1.
  DecoderState init_state(const Tensor& z) const;

  std::pair<StepOutput, DecoderState> decode_step(const DecoderState& state,
                                                  std::size_t prev_token,
                                                  const EncodedStructure& enc,
                                                  const RunMode& mode) const;

  /// Mean over the T target tokens of -log((1 - s) gen[y]) for generated
  /// tokens and -log(s * copy[k]) for copied ones.
  Tensor nll_loss(const TargetSequence& targets, const EncodedStructure& enc,
                  const RunMode& mode) const;
  /// nll_loss for several descriptions decoded in lockstep, one loss per input.
  std::vector<Tensor> batch_nll_loss(std::span<const TargetSequence* const> targets,
                                     std::span<const EncodedStructure* const> encs,
                                     const RunMode& mode) const;

  BeamResult beam_search(const EncodedStructure& enc, const ExtendedVocab& ext,
                         const Vocabulary& vocab, const BeamOptions& options) const;

  std::size_t word_vocab() const { return word_vocab_; }

 private:
  struct Advance {
    Tensor features;  // [d_t; c_t], 1 x 2d
    AttentionOutput attention;
    DecoderState next;
  };
  Advance advance(const DecoderState& state, std::size_t prev_token,
                  const EncodedStructure& enc, const RunMode& mode) const;

  /// Recurrent state of n independent decoding rows, each tensor n rows tall.
  struct Rows {
    std::vector<Tensor> hidden;
    std::vector<Tensor> cell;
    Tensor context;
  };
  /// One LSTM and attention step for every row; row p attends over *encs[p].
  /// Replaces `rows` with the successor state and returns [d_t; c_t] (n x 2d).
  Tensor step_rows(Rows& rows, std::span<const std::size_t> prev_tokens,
                   std::span<const EncodedStructure* const> encs, const RunMode& mode,
                   std::vector<AttentionOutput>& attention) const;

  struct Layer {
    Parameter *init_h_w, *init_h_b, *init_c_w, *init_c_b;
    Parameter *wx, *wh, *b;
  };

  ModelConfig config_;
  std::size_t word_vocab_;
  const Attention& attention_;
  Parameter* embed_;
  std::vector<Layer> layers_;
  Parameter* out_w_;
  Parameter* out_b_;
  Parameter* switch_w_;
  Parameter* switch_b_;
};

}  // namespace hiertab

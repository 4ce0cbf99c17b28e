#include "hiertab/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>

#include "hiertab/error.hpp"

namespace hiertab {

using ops::Axis;

namespace {

Tensor stack_rows(const std::vector<Tensor>& xs) {
  return xs.size() == 1 ? xs.front() : ops::concat(xs, Axis::kRows);
}

}  // namespace

TargetSequence make_targets(const Example& example, const Vocabulary& vocab) {
  const auto& tokens = example.description.tokens;
  if (tokens.empty()) throw Error("make_targets: empty description");
  if (example.copy_alignment.size() != tokens.size()) {
    throw Error("make_targets: copy alignment not populated");
  }
  std::vector<std::size_t> offsets{0};
  for (const Entity& e : example.structure.entities) {
    offsets.push_back(offsets.back() + e.records.size());
  }
  TargetSequence seq;
  seq.inputs.push_back(Vocabulary::kBos);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t id = vocab.word_id(tokens[t]);
    seq.targets.push_back(id);
    if (t + 1 < tokens.size()) seq.inputs.push_back(id);
    const auto& ptr = example.copy_alignment[t];
    if (ptr) {
      if (ptr->entity >= example.structure.entities.size() ||
          ptr->record >= example.structure.entities[ptr->entity].records.size()) {
        throw Error("copy pointer (" + std::to_string(ptr->entity) + ", " +
                    std::to_string(ptr->record) + ") at position " + std::to_string(t) +
                    " does not index a record");
      }
      seq.copy_index.emplace_back(offsets[ptr->entity] + ptr->record);
    } else {
      seq.copy_index.emplace_back(std::nullopt);
    }
  }
  return seq;
}

std::string ExtendedVocab::token(std::size_t id, const Vocabulary& vocab) const {
  if (id < word_count) return vocab.word(id);
  if (id < size()) return oov_values[id - word_count];
  throw Error("output id " + std::to_string(id) + " out of range");
}

std::size_t ExtendedVocab::input_id(std::size_t id) const {
  return id < word_count ? id : Vocabulary::kUnk;
}

ExtendedVocab make_extended_vocab(const DataStructure& structure, const Vocabulary& vocab) {
  ExtendedVocab ext;
  ext.word_count = vocab.word_count();
  std::map<std::string, std::size_t, std::less<>> oov;
  for (const Entity& e : structure.entities) {
    for (const Record& r : e.records) {
      if (auto id = vocab.find_word(r.value)) {
        ext.record_token.push_back(*id);
        continue;
      }
      auto [it, inserted] = oov.emplace(r.value, ext.word_count + ext.oov_values.size());
      if (inserted) ext.oov_values.push_back(r.value);
      ext.record_token.push_back(it->second);
    }
  }
  return ext;
}

std::vector<double> mixture_distribution(const StepOutput& step, const ExtendedVocab& ext) {
  const double s = step.switch_prob.item();
  std::vector<double> p(ext.size(), 0.0);
  const auto gen = step.gen_dist.values();
  for (std::size_t w = 0; w < ext.word_count; ++w) p[w] = (1.0 - s) * gen[w];
  const auto copy = step.copy_dist.values();
  if (copy.size() != ext.record_token.size()) {
    throw Error("mixture_distribution: copy distribution and extended vocabulary disagree");
  }
  for (std::size_t k = 0; k < copy.size(); ++k) p[ext.record_token[k]] += s * copy[k];
  return p;
}

// ---------------------------------------------------------------------------

Decoder::Decoder(ParameterStore& store, const ModelConfig& config, std::size_t word_vocab,
                 const Attention& attention, Rng& rng)
    : config_(config), word_vocab_(word_vocab), attention_(attention) {
  const std::size_t d = config.encoder.hidden_dim;
  embed_ = &store.add("decoder.embed", {word_vocab, d}, Init::kEmbeddingNormal, rng);
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l) + ".";
    Layer L{};
    L.init_h_w = &store.add(p + "init_h.W", {d, d}, Init::kGlorotUniform, rng);
    L.init_h_b = &store.add(p + "init_h.b", {1, d}, Init::kZeros, rng);
    L.init_c_w = &store.add(p + "init_c.W", {d, d}, Init::kGlorotUniform, rng);
    L.init_c_b = &store.add(p + "init_c.b", {1, d}, Init::kZeros, rng);
    const std::size_t in = l == 0 ? 2 * d : d;
    L.wx = &store.add(p + "lstm.Wx", {in, 4 * d}, Init::kGlorotUniform, rng);
    L.wh = &store.add(p + "lstm.Wh", {d, 4 * d}, Init::kGlorotUniform, rng);
    L.b = &store.add(p + "lstm.b", {1, 4 * d}, Init::kZeros, rng);
    layers_.push_back(L);
  }
  out_w_ = &store.add("decoder.out.W", {2 * d, word_vocab}, Init::kGlorotUniform, rng);
  out_b_ = &store.add("decoder.out.b", {1, word_vocab}, Init::kZeros, rng);
  switch_w_ = &store.add("decoder.switch.W", {2 * d, 1}, Init::kGlorotUniform, rng);
  switch_b_ = &store.add("decoder.switch.b", {1, 1}, Init::kZeros, rng);
}

DecoderState Decoder::init_state(const Tensor& z) const {
  const std::size_t d = config_.encoder.hidden_dim;
  if (z.rows() != 1 || z.cols() != d) {
    throw Error("init_state: summary has shape " + z.shape().to_string() + ", expected [1 x " +
                std::to_string(d) + "]");
  }
  DecoderState st;
  for (const Layer& L : layers_) {
    st.hidden.push_back(ops::tanh(ops::linear(z, L.init_h_w->tensor(), L.init_h_b->tensor())));
    st.cell.push_back(ops::tanh(ops::linear(z, L.init_c_w->tensor(), L.init_c_b->tensor())));
  }
  st.context = Tensor::zeros({1, d});
  st.step = 1;
  return st;
}

Tensor Decoder::step_rows(Rows& rows, std::span<const std::size_t> prev_tokens,
                         std::span<const EncodedStructure* const> encs, const RunMode& mode,
                         std::vector<AttentionOutput>& attention) const {
  const std::size_t d = config_.encoder.hidden_dim;
  const std::size_t n = prev_tokens.size();
  for (std::size_t id : prev_tokens) {
    if (id >= word_vocab_) {
      throw Error("decode_step: token id " + std::to_string(id) +
                  " outside the word vocabulary of size " + std::to_string(word_vocab_));
    }
  }
  const std::vector<Tensor> input_parts{ops::embedding_lookup(embed_->tensor(), prev_tokens),
                                        rows.context};
  Tensor x = ops::concat(input_parts, Axis::kCols);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    if (l > 0) x = mode.apply_dropout(x);
    const Tensor gates =
        ops::add_row(ops::add(ops::matmul(x, L.wx->tensor()),
                              ops::matmul(rows.hidden[l], L.wh->tensor())),
                     L.b->tensor());
    const Tensor hc = ops::lstm_cell(gates, rows.cell[l]);
    rows.hidden[l] = ops::slice_cols(hc, 0, d);
    rows.cell[l] = ops::slice_cols(hc, d, 2 * d);
    x = rows.hidden[l];
  }
  attention.clear();
  std::vector<Tensor> contexts;
  contexts.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    attention.push_back(attention_.attend(n == 1 ? x : ops::slice_rows(x, p, p + 1), *encs[p]));
    contexts.push_back(attention.back().context);
  }
  rows.context = stack_rows(contexts);
  const std::vector<Tensor> feature_parts{x, rows.context};
  return ops::concat(feature_parts, Axis::kCols);
}

Decoder::Advance Decoder::advance(const DecoderState& state, std::size_t prev_token,
                                  const EncodedStructure& enc, const RunMode& mode) const {
  Rows rows{state.hidden, state.cell, state.context};
  const std::size_t ids[] = {prev_token};
  const EncodedStructure* encs[] = {&enc};
  std::vector<AttentionOutput> attention;
  Advance out;
  out.features = step_rows(rows, ids, encs, mode, attention);
  out.attention = std::move(attention.front());
  out.next = {std::move(rows.hidden), std::move(rows.cell), std::move(rows.context),
              state.step + 1};
  return out;
}

std::pair<StepOutput, DecoderState> Decoder::decode_step(const DecoderState& state,
                                                         std::size_t prev_token,
                                                         const EncodedStructure& enc,
                                                         const RunMode& mode) const {
  Advance adv = advance(state, prev_token, enc, mode);
  const Tensor features = mode.apply_dropout(adv.features);
  StepOutput out;
  out.gen_dist =
      ops::softmax(ops::linear(features, out_w_->tensor(), out_b_->tensor()), Axis::kCols);
  out.switch_prob =
      ops::sigmoid(ops::linear(features, switch_w_->tensor(), switch_b_->tensor()));
  out.copy_dist = adv.attention.weights;
  out.hidden = adv.next.hidden.back();
  out.attention = std::move(adv.attention);
  return {std::move(out), std::move(adv.next)};
}

Tensor Decoder::nll_loss(const TargetSequence& seq, const EncodedStructure& enc,
                         const RunMode& mode) const {
  const TargetSequence* seqs[] = {&seq};
  const EncodedStructure* encs[] = {&enc};
  return batch_nll_loss(seqs, encs, mode).front();
}

std::vector<Tensor> Decoder::batch_nll_loss(std::span<const TargetSequence* const> seqs,
                                            std::span<const EncodedStructure* const> encs,
                                            const RunMode& mode) const {
  const std::size_t B = seqs.size();
  if (B == 0 || encs.size() != B) {
    throw Error("nll_loss: need one encoded structure per target sequence");
  }
  const std::size_t d = config_.encoder.hidden_dim;
  for (std::size_t b = 0; b < B; ++b) {
    const TargetSequence& seq = *seqs[b];
    const std::size_t T = seq.targets.size();
    if (T == 0 || seq.inputs.size() != T || seq.copy_index.size() != T) {
      throw Error("nll_loss: malformed target sequence");
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (seq.inputs[t] >= word_vocab_ || seq.targets[t] >= word_vocab_) {
        throw Error("nll_loss: token id outside the word vocabulary of size " +
                    std::to_string(word_vocab_));
      }
      if (const auto& k = seq.copy_index[t]; k && *k >= encs[b]->record_count()) {
        throw Error("nll_loss: copy target " + std::to_string(*k) + " outside " +
                    std::to_string(encs[b]->record_count()) + " records");
      }
    }
    const Tensor& z = encs[b]->summary;
    if (z.rows() != 1 || z.cols() != d) {
      throw Error("init_state: summary has shape " + z.shape().to_string() +
                  ", expected [1 x " + std::to_string(d) + "]");
    }
  }

  // Longest first, so the sequences still running at step t are a prefix.
  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return seqs[a]->targets.size() > seqs[b]->targets.size();
  });

  std::vector<Tensor> summaries;
  for (std::size_t b : order) summaries.push_back(encs[b]->summary);
  const Tensor z = stack_rows(summaries);
  Rows state;
  for (const Layer& L : layers_) {
    state.hidden.push_back(
        ops::tanh(ops::linear(z, L.init_h_w->tensor(), L.init_h_b->tensor())));
    state.cell.push_back(ops::tanh(ops::linear(z, L.init_c_w->tensor(), L.init_c_b->tensor())));
  }
  state.context = Tensor::zeros({B, d});

  std::vector<Tensor> features;
  std::vector<std::size_t> live_at;
  std::vector<std::vector<Tensor>> neg_terms(B);  // log-probabilities to subtract
  std::vector<AttentionOutput> attention;
  std::size_t live = B;
  const std::size_t steps = seqs[order.front()]->targets.size();
  for (std::size_t t = 0; t < steps; ++t) {
    while (seqs[order[live - 1]]->targets.size() <= t) --live;
    if (live < state.context.rows()) {
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        state.hidden[l] = ops::slice_rows(state.hidden[l], 0, live);
        state.cell[l] = ops::slice_rows(state.cell[l], 0, live);
      }
      state.context = ops::slice_rows(state.context, 0, live);
    }
    std::vector<std::size_t> ids(live);
    std::vector<const EncodedStructure*> step_encs(live);
    for (std::size_t p = 0; p < live; ++p) {
      ids[p] = seqs[order[p]]->inputs[t];
      step_encs[p] = encs[order[p]];
    }
    features.push_back(step_rows(state, ids, step_encs, mode, attention));
    for (std::size_t p = 0; p < live; ++p) {
      if (const auto& k = seqs[order[p]]->copy_index[t]) {
        neg_terms[order[p]].push_back(ops::log(ops::pick(attention[p].weights, 0, *k)));
      }
    }
    live_at.push_back(live);
  }

  const Tensor stacked = mode.apply_dropout(stack_rows(features));
  const std::size_t rows = stacked.rows();
  const Tensor log_probs = ops::log_softmax(
      ops::linear(stacked, out_w_->tensor(), out_b_->tensor()), Axis::kCols);
  // -log(1 - s) = softplus(a) and -log(s) = softplus(-a) for s = sigmoid(a).
  std::vector<double> switch_sign(rows, 1.0);
  std::vector<double> select(B * rows, 0.0);  // row r of the stack belongs to example b
  for (std::size_t t = 0, r = 0; t < steps; ++t) {
    for (std::size_t p = 0; p < live_at[t]; ++p, ++r) {
      const std::size_t b = order[p];
      if (seqs[b]->copy_index[t]) {
        switch_sign[r] = -1.0;
      } else {
        neg_terms[b].push_back(ops::pick(log_probs, r, seqs[b]->targets[t]));
      }
      select[b * rows + r] = 1.0;
    }
  }
  const Tensor switch_logits = ops::linear(stacked, switch_w_->tensor(), switch_b_->tensor());
  const Tensor switch_terms = ops::matmul(
      Tensor::constant({B, rows}, std::move(select)),
      ops::softplus(ops::mul(switch_logits, Tensor::constant({rows, 1}, std::move(switch_sign)))));
  std::vector<Tensor> losses;
  losses.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor total = ops::sub(ops::pick(switch_terms, b, 0), ops::add_n(neg_terms[b]));
    losses.push_back(ops::scale(total, 1.0 / static_cast<double>(seqs[b]->targets.size())));
  }
  return losses;
}

// --- beam search -------------------------------------------------------------

namespace {

// Traces are shared between hypotheses as persistent lists, newest first.
struct TraceNode {
  AttentionTrace entry;
  std::shared_ptr<const TraceNode> parent;
};
using TraceList = std::shared_ptr<const TraceNode>;

std::vector<AttentionTrace> unroll(TraceList node) {
  std::vector<AttentionTrace> out;
  for (; node; node = node->parent) out.push_back(node->entry);
  std::reverse(out.begin(), out.end());
  return out;
}

struct Hypothesis {
  std::vector<std::size_t> ids;
  double logprob = 0.0;
  DecoderState state;
  TraceList trace;
};

struct Finished {
  std::vector<std::size_t> ids;  // including the end marker
  double logprob;
  std::size_t finished_at;
  TraceList trace;
};

AttentionTrace make_trace(const StepOutput& out, const EncodedStructure& enc, std::size_t step,
                          std::string token) {
  AttentionTrace tr;
  tr.step = step;
  tr.token = std::move(token);
  tr.alpha.assign(out.attention.alpha.values().begin(), out.attention.alpha.values().end());
  const auto beta = out.attention.beta.values();
  for (std::size_t i = 0; i + 1 < enc.offsets.size(); ++i) {
    tr.beta.emplace_back(beta.begin() + static_cast<std::ptrdiff_t>(enc.offsets[i]),
                         beta.begin() + static_cast<std::ptrdiff_t>(enc.offsets[i + 1]));
  }
  tr.context.assign(out.attention.context.values().begin(), out.attention.context.values().end());
  tr.copy_dist.assign(out.copy_dist.values().begin(), out.copy_dist.values().end());
  tr.switch_prob = out.switch_prob.item();
  return tr;
}

}  // namespace

BeamResult Decoder::beam_search(const EncodedStructure& enc, const ExtendedVocab& ext,
                                const Vocabulary& vocab, const BeamOptions& options) const {
  if (options.beam_size == 0 || options.max_len == 0) {
    throw Error("beam_search: beam_size and max_len must be at least 1");
  }
  NoGradGuard no_grad;
  const RunMode eval = RunMode::eval();

  std::vector<Hypothesis> live(1);
  live[0].state = init_state(enc.summary);
  std::vector<Finished> finished;

  struct Candidate {
    double score;
    std::size_t hyp;
    std::size_t id;
  };

  for (std::size_t step = 1; step <= options.max_len && !live.empty(); ++step) {
    // All live hypotheses advance together as rows of one batch.
    const std::size_t n = live.size();
    Rows rows;
    std::vector<std::size_t> prev(n);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::vector<Tensor> h, c;
      for (const Hypothesis& hyp : live) {
        h.push_back(hyp.state.hidden[l]);
        c.push_back(hyp.state.cell[l]);
      }
      rows.hidden.push_back(stack_rows(h));
      rows.cell.push_back(stack_rows(c));
    }
    std::vector<Tensor> contexts;
    for (std::size_t h = 0; h < n; ++h) {
      contexts.push_back(live[h].state.context);
      prev[h] = live[h].ids.empty() ? Vocabulary::kBos : ext.input_id(live[h].ids.back());
    }
    rows.context = stack_rows(contexts);
    const std::vector<const EncodedStructure*> encs(n, &enc);
    std::vector<AttentionOutput> attention;
    const Tensor features = step_rows(rows, prev, encs, eval, attention);
    const Tensor gen =
        ops::softmax(ops::linear(features, out_w_->tensor(), out_b_->tensor()), Axis::kCols);
    const Tensor sw = ops::sigmoid(ops::linear(features, switch_w_->tensor(), switch_b_->tensor()));

    std::vector<StepOutput> outputs;
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < n; ++h) {
      StepOutput out;
      out.gen_dist = n == 1 ? gen : ops::slice_rows(gen, h, h + 1);
      out.switch_prob = n == 1 ? sw : ops::slice_rows(sw, h, h + 1);
      out.copy_dist = attention[h].weights;
      out.attention = std::move(attention[h]);
      const std::vector<double> p = mixture_distribution(out, ext);
      for (std::size_t w = 0; w < p.size(); ++w) {
        if (w == Vocabulary::kPad || w == Vocabulary::kBos) continue;
        const double lp = p[w] > 0.0 ? std::log(p[w]) : -std::numeric_limits<double>::infinity();
        cands.push_back({live[h].logprob + lp, h, w});
      }
      outputs.push_back(std::move(out));
    }
    auto next_state = [&](std::size_t h) {
      DecoderState st;
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        st.hidden.push_back(n == 1 ? rows.hidden[l] : ops::slice_rows(rows.hidden[l], h, h + 1));
        st.cell.push_back(n == 1 ? rows.cell[l] : ops::slice_rows(rows.cell[l], h, h + 1));
      }
      st.context = n == 1 ? rows.context : ops::slice_rows(rows.context, h, h + 1);
      st.step = live[h].state.step + 1;
      return st;
    };
    // Higher score first; equal scores fall back to the lexicographically
    // smaller id sequence.
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ia = live[a.hyp].ids;
      const auto& ib = live[b.hyp].ids;
      if (ia != ib) return ia < ib;
      return a.id < b.id;
    };
    const std::size_t keep = std::min(options.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), better);

    std::vector<Hypothesis> next_live;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      const Hypothesis& parent = live[cand.hyp];
      auto trace = std::make_shared<const TraceNode>(TraceNode{
          make_trace(outputs[cand.hyp], enc, step, ext.token(cand.id, vocab)), parent.trace});
      std::vector<std::size_t> ids = parent.ids;
      ids.push_back(cand.id);
      if (cand.id == Vocabulary::kEos) {
        finished.push_back({std::move(ids), cand.score, step, std::move(trace)});
      } else {
        next_live.push_back({std::move(ids), cand.score, next_state(cand.hyp), std::move(trace)});
      }
    }
    live = std::move(next_live);

    // Scores never increase with length, so no live hypothesis can overtake
    // the best finished one (and a tie would lose on finalization time).
    if (!finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const Finished& f : finished) best_finished = std::max(best_finished, f.logprob);
      if (best_finished >= live.front().logprob) break;
    }
  }

  BeamResult result;
  if (!finished.empty()) {
    const auto best = std::min_element(finished.begin(), finished.end(),
                                       [](const Finished& a, const Finished& b) {
                                         if (a.logprob != b.logprob) return a.logprob > b.logprob;
                                         if (a.finished_at != b.finished_at) {
                                           return a.finished_at < b.finished_at;
                                         }
                                         return a.ids < b.ids;
                                       });
    result.ids.assign(best->ids.begin(), best->ids.end() - 1);
    result.logprob = best->logprob;
    result.finished = true;
    result.trace = unroll(best->trace);
  } else if (!live.empty()) {
    // live is already ordered best-first.
    result.ids = live.front().ids;
    result.logprob = live.front().logprob;
    result.trace = unroll(live.front().trace);
  }
  for (std::size_t id : result.ids) result.tokens.push_back(ext.token(id, vocab));
  return result;
}

}  // namespace hiertab

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "fixtures.hpp"
#include "hiertab/error.hpp"
#include "hiertab/model.hpp"
#include "hiertab/optim.hpp"

namespace hiertab {
namespace {

using testing::make_example;
using testing::make_structure;

Vocabulary vocab() { return testing::fixture_vocab(6, 10, {"scored", "points", "and"}); }

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

double total(const Tensor& t) {
  const auto v = vec(t);
  return std::accumulate(v.begin(), v.end(), 0.0);
}

void fill(Parameter& p, double v) { std::fill(p.values().begin(), p.values().end(), v); }

TEST(InitState, ZeroSummaryGivesZeroState) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 1);
  const DecoderState st = m.decoder().init_state(Tensor::zeros({1, 8}));
  ASSERT_EQ(st.hidden.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    for (double x : vec(st.hidden[l])) EXPECT_EQ(x, 0.0);
    for (double x : vec(st.cell[l])) EXPECT_EQ(x, 0.0);
  }
  for (double x : vec(st.context)) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(InitState, DistinctAndDeterministic) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 2);
  const Tensor z1 = Tensor::row({0.1, 0.2, -0.3, 0.4, 0.0, 0.5, -0.6, 0.7});
  const Tensor z2 = Tensor::row({-0.1, 0.2, 0.3, 0.4, 0.9, 0.5, -0.6, 0.1});
  const DecoderState a = m.decoder().init_state(z1);
  const DecoderState b = m.decoder().init_state(z2);
  const DecoderState c = m.decoder().init_state(z1);
  EXPECT_NE(vec(a.hidden[0]), vec(b.hidden[0]));
  EXPECT_EQ(vec(a.hidden[1]), vec(c.hidden[1]));
  EXPECT_EQ(vec(a.cell[0]), vec(c.cell[0]));
  EXPECT_THROW(m.decoder().init_state(Tensor::zeros({1, 3})), Error);
}

TEST(DecodeStep, DistributionsAndDeterminism) {
  for (Scenario sc : {Scenario::kFlat, Scenario::kHierKv, Scenario::kHierK}) {
    Model m(testing::tiny_config(sc), vocab(), 3);
    const auto enc = m.encode(make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}}}),
                              RunMode::eval());
    const DecoderState st = m.decoder().init_state(enc.summary);
    const auto [out, next] = m.decoder().decode_step(st, Vocabulary::kBos, enc, RunMode::eval());
    EXPECT_NEAR(total(out.gen_dist), 1.0, 1e-9);
    EXPECT_NEAR(total(out.copy_dist), 1.0, 1e-9);
    EXPECT_GE(out.switch_prob.item(), 0.0);
    EXPECT_LE(out.switch_prob.item(), 1.0);
    EXPECT_EQ(next.step, 2u);
    const auto again = m.decoder().decode_step(st, Vocabulary::kBos, enc, RunMode::eval());
    EXPECT_EQ(vec(again.first.gen_dist), vec(out.gen_dist));
    EXPECT_EQ(vec(again.first.attention.context), vec(out.attention.context));
    EXPECT_THROW(m.decoder().decode_step(st, m.vocab().word_count(), enc, RunMode::eval()), Error);

    const ExtendedVocab ext = make_extended_vocab(make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}}}),
                                                  m.vocab());
    const auto p = mixture_distribution(out, ext);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(DecodeStep, KeyGuidedAndKvDiffer) {
  const auto s = make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}, {"K5", "v8"}}});
  Model k(testing::tiny_config(Scenario::kHierK), vocab(), 4);
  Model kv(testing::tiny_config(Scenario::kHierKv), vocab(), 4);
  auto context = [&](const Model& m) {
    const auto enc = m.encode(s, RunMode::eval());
    return vec(m.decoder().decode_step(m.decoder().init_state(enc.summary), Vocabulary::kBos, enc,
                                       RunMode::eval()).first.attention.context);
  };
  EXPECT_NE(context(k), context(kv));
}

TEST(ExtendedVocab, OutOfVocabularyValuesGetOwnIds) {
  const Vocabulary v = vocab();
  const auto s = make_structure({{{"K0", "v1"}, {"K1", "zz"}}, {{"K0", "zz"}, {"K2", "yy"}}});
  const ExtendedVocab ext = make_extended_vocab(s, v);
  EXPECT_EQ(ext.size(), v.word_count() + 2);
  EXPECT_EQ(ext.record_token[0], v.word_id("v1"));
  EXPECT_EQ(ext.record_token[1], v.word_count());
  EXPECT_EQ(ext.record_token[2], v.word_count());
  EXPECT_EQ(ext.token(v.word_count() + 1, v), "yy");
  EXPECT_EQ(ext.input_id(v.word_count()), Vocabulary::kUnk);
}

TEST(MakeTargets, ShiftsInputsAndMapsCopies) {
  const Vocabulary v = vocab();
  const auto ex = make_example(make_structure({{{"K0", "v1"}}, {{"K1", "v2"}, {"K2", "v3"}}}),
                               "v3 scored v1");
  const TargetSequence t = make_targets(ex, v);
  ASSERT_EQ(t.targets.size(), 4u);
  EXPECT_EQ(t.inputs, (std::vector<std::size_t>{Vocabulary::kBos, v.word_id("v3"),
                                                v.word_id("scored"), v.word_id("v1")}));
  EXPECT_EQ(t.targets.back(), Vocabulary::kEos);
  EXPECT_EQ(t.copy_index[0], std::optional<std::size_t>(2));
  EXPECT_EQ(t.copy_index[1], std::nullopt);
  EXPECT_EQ(t.copy_index[2], std::optional<std::size_t>(0));
  EXPECT_EQ(t.copy_index[3], std::nullopt);
}

TEST(NllLoss, PerfectGeneratorAndCopierGiveZero) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 5);
  const auto s = make_structure({{{"K0", "v1"}}});
  const auto enc = m.encode(s, RunMode::eval());

  TargetSequence gen{{Vocabulary::kBos}, {Vocabulary::kEos}, {std::nullopt}};
  fill(m.params().get("decoder.out.W"), 0.0);
  fill(m.params().get("decoder.out.b"), -1e3);
  m.params().get("decoder.out.b").values()[Vocabulary::kEos] = 1e3;
  fill(m.params().get("decoder.switch.W"), 0.0);
  fill(m.params().get("decoder.switch.b"), -1e3);
  EXPECT_EQ(m.decoder().nll_loss(gen, enc, RunMode::eval()).item(), 0.0);

  TargetSequence copy{{Vocabulary::kBos, m.vocab().word_id("v1")},
                      {m.vocab().word_id("v1"), m.vocab().word_id("v1")},
                      {std::size_t{0}, std::size_t{0}}};
  fill(m.params().get("decoder.switch.b"), 1e3);
  EXPECT_EQ(m.decoder().nll_loss(copy, enc, RunMode::eval()).item(), 0.0);

  TargetSequence bad = copy;
  bad.copy_index[1] = 3;
  EXPECT_THROW(m.decoder().nll_loss(bad, enc, RunMode::eval()), Error);
}

TEST(NllLoss, UniformGeneratorCostsLogV) {
  Model m(testing::tiny_config(Scenario::kHierKv), vocab(), 6);
  fill(m.params().get("decoder.out.W"), 0.0);
  fill(m.params().get("decoder.out.b"), 0.0);
  fill(m.params().get("decoder.switch.W"), 0.0);
  fill(m.params().get("decoder.switch.b"), -1e3);
  const auto ex = make_example(make_structure({{{"K0", "v1"}}, {{"K1", "v2"}}}), "scored points and");
  const double expect = std::log(static_cast<double>(m.vocab().word_count()));
  EXPECT_NEAR(m.loss(ex, RunMode::eval()).item(), expect, 1e-12);
}

TEST(NllLoss, GradCheckAllScenarios) {
  const auto ex = make_example(make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}}}),
                               "v2 scored v3");  // 4 tokens with the end marker
  ASSERT_EQ(ex.description.tokens.size(), 4u);
  for (Scenario sc : {Scenario::kFlat, Scenario::kHierKv, Scenario::kHierK}) {
    for (bool over_states : {false, true}) {
      if (sc == Scenario::kFlat && over_states) continue;
      ModelConfig c = testing::tiny_config(sc, 4);
      c.context_over_states = over_states;
      Model m(c, vocab(), 7);
      const PreparedExample prepared = m.prepare(ex);
      auto f = [&] { return m.loss(prepared, RunMode::eval()); };
      const auto params = m.params().all();
      const auto r = grad_check(f, params);
      EXPECT_LT(r.max_relative_error, 1e-4) << to_string(sc) << " " << r.worst_parameter;
    }
  }
}

TEST(NllLoss, OverfitsOneExample) {
  ModelConfig c = testing::tiny_config(Scenario::kHierK, 16);
  Model m(c, vocab(), 8);
  const auto ex = make_example(make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}, {"K3", "v4"}}}),
                               "v1 scored v4 points and v2 and v3");
  const PreparedExample prepared = m.prepare(ex);
  const auto params = m.params().all();
  AdamOptions opts;
  opts.lr = 1e-2;
  const double first = m.loss(prepared, RunMode::eval()).item();
  double loss = first;
  for (int step = 0; step < 200; ++step) {
    Tensor l = m.loss(prepared, RunMode::eval());
    loss = l.item();
    l.backward();
    adam_step(params, opts);
  }
  loss = m.loss(prepared, RunMode::eval()).item();
  EXPECT_LT(loss, 0.1) << "started at " << first;
}

// Reference loss from decode_step, one token at a time.
double stepwise_loss(const Model& m, const PreparedExample& ex) {
  const EncodedStructure enc = m.encoder().encode(ex.ids, RunMode::eval());
  DecoderState st = m.decoder().init_state(enc.summary);
  double sum = 0.0;
  const auto& seq = ex.targets;
  for (std::size_t t = 0; t < seq.targets.size(); ++t) {
    auto [out, next] = m.decoder().decode_step(st, seq.inputs[t], enc, RunMode::eval());
    const double s = out.switch_prob.item();
    if (const auto& k = seq.copy_index[t]) {
      sum -= std::log(s * out.copy_dist.values()[*k]);
    } else {
      sum -= std::log((1.0 - s) * out.gen_dist.values()[seq.targets[t]]);
    }
    st = std::move(next);
  }
  return sum / static_cast<double>(seq.targets.size());
}

TEST(BatchNllLoss, MatchesStepwiseReferenceOnRaggedBatches) {
  const char* texts[] = {"v1 scored", "scored points and v2 and v3", "v0", "and and v4 points",
                         "points"};
  for (Scenario sc : {Scenario::kFlat, Scenario::kHierKv, Scenario::kHierK}) {
    Model m(testing::tiny_config(sc), vocab(), 21);
    Rng rng(22);
    std::vector<PreparedExample> prepared;
    for (const char* text : texts) {
      prepared.push_back(m.prepare(make_example(testing::random_structure(rng, 3, 4), text)));
    }
    std::vector<const PreparedExample*> batch;
    for (const auto& p : prepared) batch.push_back(&p);
    const std::vector<Tensor> losses = m.batch_loss(batch, RunMode::eval());
    ASSERT_EQ(losses.size(), prepared.size());
    for (std::size_t b = 0; b < prepared.size(); ++b) {
      EXPECT_NEAR(losses[b].item(), stepwise_loss(m, prepared[b]), 1e-10) << to_string(sc) << b;
    }
  }
}

TEST(BatchNllLoss, GradientIsSumOfSingleExampleGradients) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 23);
  Rng rng(24);
  std::vector<PreparedExample> prepared;
  for (const char* text : {"v1 scored v2", "points", "scored and v3 and v0 points"}) {
    prepared.push_back(m.prepare(make_example(testing::random_structure(rng, 3, 4), text)));
  }
  const auto params = m.params().all();
  for (Parameter* p : params) p->zero_grad();
  for (const auto& p : prepared) m.loss(p, RunMode::eval()).backward();
  std::vector<std::vector<double>> single;
  for (Parameter* p : params) single.emplace_back(p->grad().begin(), p->grad().end());

  for (Parameter* p : params) p->zero_grad();
  std::vector<const PreparedExample*> batch;
  for (const auto& p : prepared) batch.push_back(&p);
  ops::add_n(m.batch_loss(batch, RunMode::eval())).backward();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < single[i].size(); ++j) {
      EXPECT_NEAR(params[i]->grad()[j], single[i][j], 1e-10) << params[i]->name();
    }
  }
}

TEST(BatchNllLoss, RejectsMismatchedInputs) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 25);
  const auto enc = m.encode(make_structure({{{"K0", "v1"}}}), RunMode::eval());
  const TargetSequence seq{{Vocabulary::kBos}, {Vocabulary::kEos}, {std::nullopt}};
  const TargetSequence* seqs[] = {&seq, &seq};
  const EncodedStructure* encs[] = {&enc};
  EXPECT_THROW(m.decoder().batch_nll_loss(seqs, encs, RunMode::eval()), Error);
  EXPECT_THROW(m.decoder().batch_nll_loss({}, {}, RunMode::eval()), Error);
}

// --- beam search ------------------------------------------------------------

struct Scored {
  std::vector<std::size_t> ids;  // with the end marker when finished
  double logprob = -INFINITY;
  bool finished = false;
};

bool better(const Scored& a, const Scored& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
  return a.ids < b.ids;
}

/// Every finished sequence of length <= max_len, scored step by step.
Scored exhaustive(const Model& m, const EncodedStructure& enc, const ExtendedVocab& ext,
                  std::size_t max_len) {
  Scored best;
  std::function<void(const DecoderState&, std::vector<std::size_t>&, double)> rec =
      [&](const DecoderState& st, std::vector<std::size_t>& ids, double lp) {
        const std::size_t prev = ids.empty() ? Vocabulary::kBos : ext.input_id(ids.back());
        const auto [out, next] = m.decoder().decode_step(st, prev, enc, RunMode::eval());
        const auto p = mixture_distribution(out, ext);
        for (std::size_t w = 0; w < p.size(); ++w) {
          if (w == Vocabulary::kPad || w == Vocabulary::kBos) continue;
          ids.push_back(w);
          const double score = lp + std::log(p[w]);
          if (w == Vocabulary::kEos) {
            Scored s{ids, score, true};
            if (!best.finished || better(s, best)) best = s;
          } else if (ids.size() < max_len) {
            rec(next, ids, score);
          }
          ids.pop_back();
        }
      };
  std::vector<std::size_t> ids;
  rec(m.decoder().init_state(enc.summary), ids, 0.0);
  return best;
}

std::vector<std::size_t> greedy(const Model& m, const EncodedStructure& enc,
                                const ExtendedVocab& ext, std::size_t max_len) {
  std::vector<std::size_t> ids;
  DecoderState st = m.decoder().init_state(enc.summary);
  for (std::size_t t = 0; t < max_len; ++t) {
    const std::size_t prev = ids.empty() ? Vocabulary::kBos : ext.input_id(ids.back());
    auto [out, next] = m.decoder().decode_step(st, prev, enc, RunMode::eval());
    const auto p = mixture_distribution(out, ext);
    std::size_t arg = Vocabulary::kUnk;
    for (std::size_t w = 0; w < p.size(); ++w) {
      if (w == Vocabulary::kPad || w == Vocabulary::kBos) continue;
      if (p[w] > p[arg]) arg = w;
    }
    if (arg == Vocabulary::kEos) break;
    ids.push_back(arg);
    st = std::move(next);
  }
  return ids;
}

/// Five candidate outputs: UNK, EOS and three words that are also values.
Vocabulary small_vocab() { return testing::fixture_vocab(3, 3, {}); }

void sharpen(Model& m, double factor) {
  for (double& x : m.params().get("decoder.out.W").values()) x *= factor;
  for (double& x : m.params().get("decoder.switch.W").values()) x *= factor;
}

TEST(BeamSearch, WideBeamEqualsExhaustiveArgmax) {
  Rng rng(9);
  int checked = 0;
  for (Scenario sc : {Scenario::kFlat, Scenario::kHierKv, Scenario::kHierK}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Model m(testing::tiny_config(sc), small_vocab(), 100 + seed);
      sharpen(m, 6.0);
      const DataStructure s = testing::random_structure(rng, 3, 3, 3, 3);
      const auto enc = m.encode(s, RunMode::eval());
      const ExtendedVocab ext = make_extended_vocab(s, m.vocab());
      ASSERT_EQ(ext.size() - 2, 5u);
      for (std::size_t max_len : {1u, 2u, 3u}) {
        const Scored oracle = exhaustive(m, enc, ext, max_len);
        const BeamResult r = m.decoder().beam_search(enc, ext, m.vocab(), {125, max_len});
        ASSERT_TRUE(r.finished);
        std::vector<std::size_t> ids = r.ids;
        ids.push_back(Vocabulary::kEos);
        EXPECT_EQ(ids, oracle.ids);
        EXPECT_EQ(r.logprob, oracle.logprob);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 45);
}

TEST(BeamSearch, WidthOneIsGreedy) {
  Rng rng(10);
  for (Scenario sc : {Scenario::kFlat, Scenario::kHierKv, Scenario::kHierK}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      Model m(testing::tiny_config(sc), vocab(), 200 + seed);
      sharpen(m, 4.0);
      const DataStructure s = testing::random_structure(rng, 3, 4);
      const auto enc = m.encode(s, RunMode::eval());
      const ExtendedVocab ext = make_extended_vocab(s, m.vocab());
      const BeamResult r = m.decoder().beam_search(enc, ext, m.vocab(), {1, 12});
      EXPECT_EQ(r.ids, greedy(m, enc, ext, 12));
    }
  }
}

TEST(BeamSearch, ScoreNonDecreasingInBeamSize) {
  // A width that runs out of length returns a partial score, which is not
  // comparable with complete ones; such fixtures are counted but not compared.
  Rng rng(11);
  int compared = 0, improved = 0;
  for (Scenario sc : {Scenario::kFlat, Scenario::kHierKv, Scenario::kHierK}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Model m(testing::tiny_config(sc), small_vocab(), 300 + seed);
      sharpen(m, 3.0);
      m.params().get("decoder.out.b").values()[Vocabulary::kEos] += 4.0;
      const DataStructure s = testing::random_structure(rng, 3, 3, 3, 3);
      const auto enc = m.encode(s, RunMode::eval());
      const ExtendedVocab ext = make_extended_vocab(s, m.vocab());
      std::vector<BeamResult> results;
      for (std::size_t beam : {1u, 2u, 5u, 10u}) {
        results.push_back(m.decoder().beam_search(enc, ext, m.vocab(), {beam, 30}));
      }
      if (!std::all_of(results.begin(), results.end(), [](const BeamResult& r) { return r.finished; })) {
        continue;
      }
      ++compared;
      for (std::size_t k = 1; k < results.size(); ++k) {
        EXPECT_GE(results[k].logprob, results[k - 1].logprob)
            << to_string(sc) << " seed " << seed << " step " << k;
      }
      improved += results.back().logprob > results.front().logprob;
    }
  }
  EXPECT_GE(compared, 30);
  EXPECT_GE(improved, 5);
}

TEST(BeamSearch, TraceCoversEveryStepAndIsSimplex) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 12);
  sharpen(m, 3.0);
  const auto s = make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}}});
  const auto enc = m.encode(s, RunMode::eval());
  const BeamResult r = m.decoder().beam_search(enc, make_extended_vocab(s, m.vocab()), m.vocab(), {5, 10});
  EXPECT_EQ(r.trace.size(), r.ids.size() + (r.finished ? 1 : 0));
  for (std::size_t t = 0; t < r.trace.size(); ++t) {
    const AttentionTrace& tr = r.trace[t];
    EXPECT_EQ(tr.step, t + 1);
    EXPECT_NEAR(std::accumulate(tr.alpha.begin(), tr.alpha.end(), 0.0), 1.0, 1e-9);
    for (const auto& b : tr.beta) EXPECT_NEAR(std::accumulate(b.begin(), b.end(), 0.0), 1.0, 1e-9);
    EXPECT_NEAR(std::accumulate(tr.copy_dist.begin(), tr.copy_dist.end(), 0.0), 1.0, 1e-9);
    if (t < r.tokens.size()) EXPECT_EQ(tr.token, r.tokens[t]);
  }
}

TEST(BeamSearch, OutOfVocabularyTokensComeFromCopies) {
  Model m(testing::tiny_config(Scenario::kHierKv), vocab(), 13);
  fill(m.params().get("decoder.switch.W"), 0.0);
  fill(m.params().get("decoder.switch.b"), 30.0);
  const auto s = make_structure({{{"K0", "zz"}, {"K1", "v2"}}, {{"K2", "qq"}}});
  const auto enc = m.encode(s, RunMode::eval());
  const ExtendedVocab ext = make_extended_vocab(s, m.vocab());
  const BeamResult r = m.decoder().beam_search(enc, ext, m.vocab(), {3, 8});
  const auto records = linearize(s);
  std::size_t oov = 0;
  for (std::size_t t = 0; t < r.ids.size(); ++t) {
    if (r.ids[t] < ext.word_count) continue;
    ++oov;
    double mass = 0.0;
    for (std::size_t k = 0; k < records.size(); ++k) {
      if (records[k].value == r.tokens[t]) mass += r.trace[t].copy_dist[k];
    }
    EXPECT_GT(r.trace[t].switch_prob * mass, 0.0);
    EXPECT_FALSE(m.vocab().find_word(r.tokens[t]).has_value());
  }
  EXPECT_GT(oov, 0u);
}

TEST(BeamSearch, RejectsZeroSizes) {
  Model m(testing::tiny_config(Scenario::kHierK), vocab(), 14);
  const auto s = make_structure({{{"K0", "v1"}}});
  const auto enc = m.encode(s, RunMode::eval());
  EXPECT_THROW(m.decoder().beam_search(enc, make_extended_vocab(s, m.vocab()), m.vocab(), {0, 5}),
               Error);
}

}  // namespace
}  // namespace hiertab

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "hiertab/error.hpp"
#include "hiertab/training.hpp"

namespace hiertab {
namespace {

using testing::make_example;
using testing::make_structure;
using testing::ScratchDir;

Dataset toy_dataset() {
  Dataset ds;
  ds.split = Split::kTrain;
  ds.examples.push_back(make_example(
      make_structure({{{"K0", "v1"}, {"K1", "v2"}}, {{"K2", "v3"}}}), "v1 scored and v3"));
  ds.examples.push_back(make_example(make_structure({{{"K0", "v4"}}, {{"K1", "v5"}, {"K3", "v1"}}}),
                                     "scored v5 and v4 scored"));
  ds.examples.push_back(
      make_example(make_structure({{{"K2", "v2"}, {"K3", "v3"}}}), "and v2 and scored v3"));
  return ds;
}

RunConfig small_run(std::size_t updates) {
  RunConfig rc;
  rc.model = testing::tiny_config(Scenario::kHierKv);
  rc.model.encoder.dropout = 0.2;
  rc.train.batch_size = 2;
  rc.train.total_updates = updates;
  rc.train.checkpoint_every = 2;
  rc.train.average_last_k = 2;
  rc.train.lr_halving_period = 3;
  rc.train.seed = 11;
  return rc;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(LearningRate, HalvesEveryPeriod) {
  TrainConfig tc;  // library defaults
  EXPECT_EQ(learning_rate(tc, 0), 0.001);
  EXPECT_EQ(learning_rate(tc, 9999), 0.001);
  EXPECT_EQ(learning_rate(tc, 10000), 0.0005);
  EXPECT_EQ(learning_rate(tc, 20000), 0.00025);
}

TEST(Train, ZeroUpdatesWritesOnlyTheInitialCheckpoint) {
  ScratchDir dir("train_zero");
  const TrainResult r = train(toy_dataset(), small_run(0), dir.path());
  EXPECT_TRUE(r.curve.empty());
  ASSERT_EQ(r.checkpoints.size(), 1u);
  EXPECT_EQ(r.checkpoints[0].filename(), "ckpt_000000.bin");
  EXPECT_EQ(slurp(r.loss_curve), "update,lr,loss\n");
  const Checkpoint initial = read_checkpoint(r.checkpoints[0]);
  Checkpoint final_ck = read_checkpoint(r.final_checkpoint);
  EXPECT_EQ(final_ck.params, initial.params);
}

TEST(Train, CheckpointCadenceScheduleAndAveraging) {
  ScratchDir dir("train_cadence");
  const TrainResult r = train(toy_dataset(), small_run(6), dir.path());
  ASSERT_EQ(r.curve.size(), 6u);
  for (std::size_t u = 0; u < 6; ++u) {
    EXPECT_EQ(r.curve[u].update, u + 1);
    EXPECT_EQ(r.curve[u].lr, 0.001 * std::pow(0.5, static_cast<double>(u / 3)));
    EXPECT_TRUE(std::isfinite(r.curve[u].loss));
  }
  std::vector<std::string> names;
  for (const auto& p : r.checkpoints) names.push_back(p.filename().string());
  EXPECT_EQ(names, (std::vector<std::string>{"ckpt_000000.bin", "ckpt_000002.bin",
                                             "ckpt_000004.bin", "ckpt_000006.bin"}));
  const std::vector<std::filesystem::path> last{r.checkpoints[2], r.checkpoints[3]};
  EXPECT_EQ(read_checkpoint(r.final_checkpoint).params, average_checkpoints(last).params);
  EXPECT_TRUE(read_checkpoint(dir / "last_with_adam.bin").params.front().adam.has_value());

  std::ifstream csv(r.loss_curve);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 7u);
}

TEST(Train, SameSeedIsBitIdenticalAndSeedMatters) {
  ScratchDir a("train_det_a"), b("train_det_b"), c("train_det_c");
  const TrainResult ra = train(toy_dataset(), small_run(4), a.path());
  const TrainResult rb = train(toy_dataset(), small_run(4), b.path());
  EXPECT_EQ(slurp(ra.final_checkpoint), slurp(rb.final_checkpoint));
  EXPECT_EQ(slurp(ra.loss_curve), slurp(rb.loss_curve));
  RunConfig other = small_run(4);
  other.train.seed = 12;
  const TrainResult rc = train(toy_dataset(), other, c.path());
  EXPECT_NE(slurp(ra.final_checkpoint), slurp(rc.final_checkpoint));
}

TEST(Train, NonFiniteLossAbortsNamingTheUpdate) {
  ScratchDir dir("train_nan");
  RunConfig rc = small_run(4);
  rc.train.lr = 1e300;  // the first Adam step throws every weight to +-1e300
  try {
    train(toy_dataset(), rc, dir.path());
    FAIL() << "expected a non-finite loss";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at update 2"), std::string::npos)
        << e.what();
  }
}

TEST(Train, RejectsBadInputs) {
  ScratchDir dir("train_bad");
  Dataset empty;
  empty.split = Split::kTrain;
  EXPECT_THROW(train(empty, small_run(2), dir.path()), Error);
  Dataset valid = toy_dataset();
  valid.split = Split::kValid;
  EXPECT_THROW(train(valid, small_run(2), dir.path()), Error);
  RunConfig too_many = small_run(2);
  too_many.train.average_last_k = 5;
  EXPECT_THROW(train(toy_dataset(), too_many, dir.path()), Error);
}

TEST(EvaluateLoss, UniformModelMatchesAnalyticBound) {
  Dataset ds;
  ds.split = Split::kValid;
  // Generation-only descriptions: none of these words is a record value.
  ds.examples.push_back(make_example(make_structure({{{"K0", "v1"}}}), "scored and scored"));
  ds.examples.push_back(make_example(make_structure({{{"K1", "v2"}}, {{"K2", "v3"}}}), "and"));
  Model m(testing::tiny_config(Scenario::kHierK), testing::fixture_vocab(4, 6, {"scored", "and"}),
          3);
  for (const char* name : {"decoder.out.W", "decoder.out.b", "decoder.switch.W"}) {
    auto v = m.params().get(name).values();
    std::fill(v.begin(), v.end(), 0.0);
  }
  const double a = -1.5;
  m.params().get("decoder.switch.b").values()[0] = a;
  const double V = static_cast<double>(m.vocab().word_count());
  const double expect = std::log(V) + std::log1p(std::exp(a));
  const double got = evaluate_loss(m, ds);
  EXPECT_NEAR(got, expect, 1e-12);
  EXPECT_EQ(evaluate_loss(m, ds), got);
}

TEST(EvaluateLoss, MemorizerIsNearZeroOnItsTrainingSet) {
  ScratchDir dir("train_overfit");
  Dataset ds;
  ds.split = Split::kTrain;
  ds.examples.push_back(toy_dataset().examples[0]);
  RunConfig rc;
  rc.model = testing::tiny_config(Scenario::kHierK, 16);
  rc.train.batch_size = 1;
  rc.train.total_updates = 300;
  rc.train.checkpoint_every = 300;
  rc.train.average_last_k = 1;
  rc.train.lr = 1e-2;
  rc.train.lr_halving_period = 1000;
  const TrainResult r = train(ds, rc, dir.path());
  const auto model = load_model(r.final_checkpoint);
  EXPECT_LT(evaluate_loss(*model, ds), 0.05);
}

TEST(EvaluateLoss, EmptyDatasetIsAnError) {
  Model m(testing::tiny_config(Scenario::kFlat), testing::fixture_vocab(2, 2, {}), 1);
  EXPECT_THROW(evaluate_loss(m, Dataset{}), Error);
}

}  // namespace
}  // namespace hiertab

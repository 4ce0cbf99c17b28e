#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "hiertab/error.hpp"
#include "hiertab/toygen.hpp"

namespace hiertab {
namespace {

ToyGenConfig small_config(std::uint64_t seed = 7) {
  ToyGenConfig c;
  c.train = 800;
  c.valid = 100;
  c.test = 100;
  c.seed = seed;
  return c;
}

const ToyCorpus& default_corpus() {
  static const ToyCorpus corpus = generate_corpus(ToyGenConfig{});
  return corpus;
}

std::vector<const ToySplit*> splits(const ToyCorpus& c) { return {&c.train, &c.valid, &c.test}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(ToyGen, ExtractorReproducesSidecarsOnThousandExamples) {
  const ToyCorpus corpus = generate_corpus(small_config());
  std::size_t checked = 0, relations = 0;
  for (const ToySplit* split : splits(corpus)) {
    ASSERT_EQ(split->relations.size(), split->dataset.examples.size());
    for (std::size_t i = 0; i < split->relations.size(); ++i) {
      const Example& ex = split->dataset.examples[i];
      EXPECT_EQ(extract_relations(ex.description.tokens, ex.structure), split->relations[i]);
      relations += split->relations[i].size();
      ++checked;
    }
  }
  EXPECT_EQ(checked, 1000u);
  EXPECT_GT(relations, 5000u);
}

TEST(ToyGen, SameSeedSameFilesDifferentSeedDifferentCorpus) {
  testing::ScratchDir a("toygen_a"), b("toygen_b");
  write_corpus(generate_corpus(small_config(3)), a.path());
  write_corpus(generate_corpus(small_config(3)), b.path());
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "train.relations.jsonl",
                        "valid.relations.jsonl", "test.relations.jsonl"}) {
    const std::string contents = slurp(a / f);
    EXPECT_FALSE(contents.empty()) << f;
    EXPECT_EQ(contents, slurp(b / f)) << f;
  }
  EXPECT_NE(generate_corpus(small_config(3)).train.dataset,
            generate_corpus(small_config(4)).train.dataset);
}

TEST(ToyGen, EveryValueTokenIsAligned) {
  for (const ToySplit* split : splits(default_corpus())) {
    for (const Example& ex : split->dataset.examples) {
      std::set<std::string> values;
      for (const Record& r : linearize(ex.structure)) values.insert(r.value);
      ASSERT_EQ(ex.copy_alignment.size(), ex.description.tokens.size());
      for (std::size_t t = 0; t < ex.description.tokens.size(); ++t) {
        const std::string& tok = ex.description.tokens[t];
        ASSERT_EQ(ex.copy_alignment[t].has_value(), values.count(tok) == 1) << tok;
        if (const auto& ptr = ex.copy_alignment[t]) {
          EXPECT_EQ(ex.structure.entities[ptr->entity].records[ptr->record].value, tok);
        }
      }
    }
  }
}

TEST(ToyGen, SchemaShapeAtDefaults) {
  const ToyCorpus& corpus = default_corpus();
  EXPECT_EQ(corpus.train.dataset.examples.size(), 2000u);
  EXPECT_EQ(corpus.valid.dataset.examples.size(), 300u);
  EXPECT_EQ(corpus.test.dataset.examples.size(), 300u);

  const std::vector<std::string> keys = key_inventory(corpus.train.dataset);
  EXPECT_EQ(keys.size(), 12u);
  EXPECT_EQ(build_vocab(corpus.train.dataset, 1).key_count(), 13u);  // plus ENT

  std::set<std::string> expected(toy_player_keys().begin(), toy_player_keys().end());
  expected.insert(toy_team_keys().begin(), toy_team_keys().end());
  expected.insert("NAME");
  EXPECT_EQ(std::set<std::string>(keys.begin(), keys.end()), expected);

  for (const ToySplit* split : splits(corpus)) {
    EXPECT_EQ(split->dataset.split, split == &corpus.train   ? Split::kTrain
                                    : split == &corpus.valid ? Split::kValid
                                                             : Split::kTest);
    for (const Example& ex : split->dataset.examples) {
      validate_structure(ex.structure);
      const auto& es = ex.structure.entities;
      ASSERT_GE(es.size(), 4u);
      ASSERT_LE(es.size(), 8u);
      for (std::size_t i = 0; i < es.size(); ++i) {
        EXPECT_EQ(es[i].kind, i < 2 ? EntityKind::kTeam : EntityKind::kPlayer);
        EXPECT_EQ(es[i].records.size(), i < 2 ? 5u : 9u);  // stats plus NAME
        std::set<std::string> values;
        for (const Record& r : es[i].records) EXPECT_TRUE(values.insert(r.value).second);
      }
      const std::size_t len = ex.description.tokens.size() - 1;  // end marker
      EXPECT_EQ(ex.description.tokens.back(), kEosToken);
      EXPECT_GE(len, 30u);
      EXPECT_LE(len, 80u);
    }
  }
}

TEST(ToyGen, VocabularyStaysSmall) {
  std::set<std::string> types;
  for (const ToySplit* split : splits(default_corpus())) {
    for (const Example& ex : split->dataset.examples) {
      types.insert(ex.description.tokens.begin(), ex.description.tokens.end());
    }
  }
  EXPECT_LE(types.size(), 400u);
  const Vocabulary vocab = build_vocab(default_corpus().train.dataset, 1);
  EXPECT_LE(vocab.word_count(), 404u);  // four reserved ids
}

TEST(ToyGen, GoldDescriptionsAreFactual) {
  for (const ToySplit* split : splits(default_corpus())) {
    for (std::size_t i = 0; i < split->relations.size(); ++i) {
      const RgScore rg = rg_score(split->relations[i], split->dataset.examples[i].structure);
      ASSERT_EQ(rg.correct, rg.extracted);
      ASSERT_GT(rg.extracted, 0u);
    }
  }
}

TEST(ToyGen, SplitsAreDisjoint) {
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const ToySplit* split : splits(default_corpus())) {
    for (const Example& ex : split->dataset.examples) {
      seen.insert(serialize_example(ex));
      ++total;
    }
  }
  EXPECT_EQ(seen.size(), total);
}

TEST(ToyGen, TemplatesVaryOrder) {
  // Both game-sentence templates occur: sometimes the winner is named first.
  std::size_t winner_first = 0, loser_first = 0;
  for (const Example& ex : default_corpus().train.dataset.examples) {
    const auto& es = ex.structure.entities;
    const bool first_won = std::stoi(*es[0].find("PTS")) > std::stoi(*es[1].find("PTS"));
    const std::string& winner = *es[first_won ? 0 : 1].find("NAME");
    (ex.description.tokens[1] == winner ? winner_first : loser_first)++;
  }
  EXPECT_GT(winner_first, 100u);
  EXPECT_GT(loser_first, 100u);
}

TEST(ToyGen, FilesRoundTrip) {
  const ToyCorpus corpus = generate_corpus(small_config());
  testing::ScratchDir dir("toygen_rt");
  write_corpus(corpus, dir.path());
  for (const ToySplit* split : splits(corpus)) {
    const std::string tag(to_string(split->dataset.split));
    EXPECT_EQ(parse_dataset(dir / (tag + ".jsonl"), split->dataset.split), split->dataset);
    EXPECT_EQ(read_relations(dir / (tag + ".relations.jsonl")), split->relations);
  }
}

TEST(ToyGen, RejectsInvalidConfigs) {
  ToyGenConfig c = small_config();
  c.valid = 0;
  EXPECT_THROW(generate_corpus(c), Error);
  c = small_config();
  c.min_players = 5;
  c.max_players = 3;
  EXPECT_THROW(validate(c), Error);
  c = small_config();
  c.min_tokens = 90;
  EXPECT_THROW(validate(c), Error);
}

TEST(ReadRelations, NamesTheBadLine) {
  testing::ScratchDir dir("toygen_bad");
  std::ofstream(dir / "bad.jsonl") << R"({"relations":[]})" << "\n" << R"({"rel":1})" << "\n";
  try {
    read_relations(dir / "bad.jsonl");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace hiertab

#include "hiertab/toygen.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

#include "hiertab/error.hpp"
#include "hiertab/rng.hpp"

namespace hiertab {

namespace {

const char* const kTeams[] = {"Hawks",   "Celtics", "Nets",    "Hornets", "Bulls",   "Cavaliers",
                              "Mavericks", "Nuggets", "Pistons", "Warriors", "Rockets", "Pacers",
                              "Clippers", "Lakers",  "Grizzlies", "Heat"};
const char* const kFirst[] = {"Jeff", "Kyle", "Paul", "Al",    "Dennis",
                              "Isaiah", "Kevin", "Marcus", "Tony", "Dwight"};
const char* const kLast[] = {"Teague", "Korver", "Millsap", "Horford", "Schroder", "Thomas",
                             "Love",   "Smart",  "Allen",   "Parker",  "Howard",   "Bradley"};

struct Range {
  int lo, hi;
};

struct Mention {
  std::size_t entity;
  std::string key;
};

/// Builds a description token by token while recording which tokens are
/// intended (entity, key) mentions.
class Writer {
 public:
  explicit Writer(const DataStructure& s) : s_(s) {}
  void word(const std::string& w) { tokens_.push_back(w); }
  void words(std::initializer_list<const char*> ws) {
    for (const char* w : ws) tokens_.emplace_back(w);
  }
  void name(std::size_t entity) { tokens_.push_back(*s_.entities[entity].find("NAME")); }
  void value(std::size_t entity, const std::string& key) {
    tokens_.push_back(*s_.entities[entity].find(key));
    RelationTuple rel{*s_.entities[entity].find("NAME"), tokens_.back(), key};
    if (seen_.insert(rel).second) relations_.push_back(std::move(rel));
  }
  std::vector<std::string>& tokens() { return tokens_; }
  std::vector<RelationTuple>& relations() { return relations_; }

 private:
  const DataStructure& s_;
  std::vector<std::string> tokens_;
  std::vector<RelationTuple> relations_;
  std::set<RelationTuple> seen_;
};

int stat(const Entity& e, const std::string& key) { return std::stoi(*e.find(key)); }

bool distinct_values(const Entity& e) {
  std::set<std::string> v;
  for (const Record& r : e.records) {
    if (!v.insert(r.value).second) return false;
  }
  return true;
}

Entity make_team(Rng& rng, const std::string& name) {
  for (;;) {
    Entity e;
    e.kind = EntityKind::kTeam;
    const int wins = rng.uniform_int(0, 60);
    const int losses = rng.uniform_int(0, 60);
    e.records = {{"NAME", name},
                 {"PTS", std::to_string(rng.uniform_int(85, 125))},
                 {"WINS", std::to_string(wins)},
                 {"LOSSES", std::to_string(losses)},
                 {"QTR1", std::to_string(rng.uniform_int(15, 38))}};
    if (distinct_values(e)) return e;
  }
}

Entity make_player(Rng& rng, const std::string& name) {
  for (;;) {
    const int fg = rng.uniform_int(0, 10);
    const int ft = rng.uniform_int(0, 6);
    const int pts = 2 * fg + ft + rng.uniform_int(0, 3);
    Entity e;
    e.kind = EntityKind::kPlayer;
    e.records = {{"NAME", name},
                 {"PTS", std::to_string(pts)},
                 {"REB", std::to_string(rng.uniform_int(0, 14))},
                 {"AST", std::to_string(rng.uniform_int(0, 11))},
                 {"STL", std::to_string(rng.uniform_int(0, 4))},
                 {"BLK", std::to_string(rng.uniform_int(0, 4))},
                 {"MIN", std::to_string(rng.uniform_int(8, 42))},
                 {"FG", std::to_string(fg)},
                 {"FT", std::to_string(ft)}};
    if (distinct_values(e)) return e;
  }
}

void game_sentence(Writer& w, Rng& rng, std::size_t winner, std::size_t loser) {
  auto record = [&](std::size_t t) {
    w.word("(");
    w.value(t, "WINS");
    w.word("-");
    w.value(t, "LOSSES");
    w.word(")");
  };
  if (rng.bernoulli(0.5)) {
    w.word("The");
    w.name(winner);
    record(winner);
    w.words({"scored"});
    w.value(winner, "PTS");
    w.words({"points", "to", "beat", "the"});
    w.name(loser);
    record(loser);
    w.words({",", "who", "finished", "with"});
    w.value(loser, "PTS");
    w.word(".");
  } else {
    w.word("The");
    w.name(loser);
    record(loser);
    w.words({"managed", "only"});
    w.value(loser, "PTS");
    w.words({"points", "against", "the"});
    w.name(winner);
    record(winner);
    w.words({",", "who", "scored"});
    w.value(winner, "PTS");
    w.word(".");
  }
}

void quarter_sentence(Writer& w, Rng& rng, std::size_t a, std::size_t b) {
  if (rng.bernoulli(0.5)) std::swap(a, b);
  w.word("The");
  w.name(a);
  w.words({"had"});
  w.value(a, "QTR1");
  w.words({"points", "in", "the", "first", "quarter", ",", "while", "the"});
  w.name(b);
  w.words({"had"});
  w.value(b, "QTR1");
  w.word(".");
}

void player_sentence(Writer& w, Rng& rng, const DataStructure& s, std::size_t p, bool top) {
  const Entity& e = s.entities[p];
  static const char* const kOpen[][2] = {{"scored", "points"},
                                         {"finished", "with"},
                                         {"added", "points"},
                                         {"poured", "in"}};
  const auto& open = kOpen[rng.index(4)];
  w.name(p);
  if (std::string(open[1]) == "points") {
    w.word(open[0]);
    w.value(p, "PTS");
    w.word("points");
  } else {
    w.word(open[0]);
    w.word(open[1]);
    w.value(p, "PTS");
    w.word("points");
  }
  struct Extra {
    const char* key;
    int threshold;
    const char* verb;
    const char* noun;
  };
  static const Extra kExtras[] = {{"REB", 10, "grabbed", "rebounds"},
                                  {"AST", 8, "dished", "assists"},
                                  {"STL", 4, "recorded", "steals"},
                                  {"BLK", 4, "blocked", "shots"}};
  std::vector<const Extra*> extras;
  for (const Extra& x : kExtras) {
    if (stat(e, x.key) >= x.threshold) extras.push_back(&x);
  }
  rng.shuffle(extras);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    w.word(i + 1 == extras.size() ? "and" : ",");
    w.word(extras[i]->verb);
    w.value(p, extras[i]->key);
    w.word(extras[i]->noun);
  }
  if (stat(e, "PTS") >= 20) {
    w.word("in");
    w.value(p, "MIN");
    w.word("minutes");
  }
  w.word(".");
  if (top) {
    w.name(p);
    w.words({"made"});
    w.value(p, "FG");
    w.words({"field", "goals", "and"});
    w.value(p, "FT");
    w.words({"free", "throws", "."});
  }
}

struct Candidate {
  Example example;
  std::vector<RelationTuple> relations;
};

enum class Verdict { kOk, kExtraction, kLength };

Verdict make_candidate(Rng& rng, const ToyGenConfig& c, Candidate& out) {
  DataStructure s;
  std::vector<std::size_t> teams(std::size(kTeams));
  for (std::size_t i = 0; i < teams.size(); ++i) teams[i] = i;
  rng.shuffle(teams);
  s.entities.push_back(make_team(rng, kTeams[teams[0]]));
  s.entities.push_back(make_team(rng, kTeams[teams[1]]));
  while (stat(s.entities[0], "PTS") == stat(s.entities[1], "PTS")) {
    s.entities[1] = make_team(rng, kTeams[teams[1]]);
  }
  const std::size_t n_players = c.min_players + rng.index(c.max_players - c.min_players + 1);
  std::vector<std::size_t> players(std::size(kFirst) * 6);
  for (std::size_t i = 0; i < players.size(); ++i) players[i] = i;
  rng.shuffle(players);
  for (std::size_t k = 0; k < n_players; ++k) {
    const std::size_t i = players[k];
    s.entities.push_back(make_player(rng, std::string(kFirst[i % 10]) + "_" + kLast[i / 5]));
  }
  Writer w(s);
  const bool first_wins = stat(s.entities[0], "PTS") > stat(s.entities[1], "PTS");
  game_sentence(w, rng, first_wins ? 0 : 1, first_wins ? 1 : 0);
  if (std::abs(stat(s.entities[0], "QTR1") - stat(s.entities[1], "QTR1")) >= 5) {
    quarter_sentence(w, rng, 0, 1);
  }
  std::vector<std::size_t> salient;
  for (std::size_t p = 2; p < s.entities.size(); ++p) {
    if (stat(s.entities[p], "PTS") >= 15) salient.push_back(p);
  }
  std::stable_sort(salient.begin(), salient.end(), [&](std::size_t a, std::size_t b) {
    return stat(s.entities[a], "PTS") > stat(s.entities[b], "PTS");
  });
  for (std::size_t k = 0; k < salient.size(); ++k) player_sentence(w, rng, s, salient[k], k == 0);

  const std::size_t len = w.tokens().size();
  if (len < c.min_tokens || len > c.max_tokens) return Verdict::kLength;
  if (extract_relations(w.tokens(), s, c.extractor) != w.relations()) return Verdict::kExtraction;

  Example ex;
  ex.structure = std::move(s);
  ex.description.tokens = std::move(w.tokens());
  ex.description.tokens.emplace_back(kEosToken);
  out.example = align_copies(std::move(ex));
  out.relations = std::move(w.relations());
  return Verdict::kOk;
}

}  // namespace

const std::vector<std::string>& toy_player_keys() {
  static const std::vector<std::string> keys{"PTS", "REB", "AST", "STL", "BLK", "MIN", "FG", "FT"};
  return keys;
}

const std::vector<std::string>& toy_team_keys() {
  static const std::vector<std::string> keys{"PTS", "WINS", "LOSSES", "QTR1"};
  return keys;
}

void validate(const ToyGenConfig& c) {
  if (c.train == 0 || c.valid == 0 || c.test == 0) throw Error("toygen: every split needs examples");
  if (c.min_players == 0 || c.min_players > c.max_players) {
    throw Error("toygen: need 1 <= min_players <= max_players");
  }
  if (c.max_players > std::size(kFirst) * 6) throw Error("toygen: max_players exceeds the name pool");
  if (c.min_tokens > c.max_tokens) throw Error("toygen: min_tokens exceeds max_tokens");
}

ToyCorpus generate_corpus(const ToyGenConfig& c) {
  validate(c);
  Rng rng(c.seed);
  ToyCorpus corpus;
  const std::size_t total = c.train + c.valid + c.test;
  std::vector<Candidate> pool;
  std::set<std::string> seen;
  pool.reserve(total);
  while (pool.size() < total) {
    Candidate cand;
    switch (make_candidate(rng, c, cand)) {
      case Verdict::kExtraction: ++corpus.rejected_extraction; continue;
      case Verdict::kLength: ++corpus.rejected_length; continue;
      case Verdict::kOk: break;
    }
    // Splits must not share an example.
    if (!seen.insert(serialize_example(cand.example)).second) continue;
    pool.push_back(std::move(cand));
  }
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  rng.shuffle(order);
  auto fill = [&](ToySplit& split, Split tag, std::size_t begin, std::size_t end) {
    split.dataset.split = tag;
    for (std::size_t k = begin; k < end; ++k) {
      split.dataset.examples.push_back(pool[order[k]].example);
      split.relations.push_back(pool[order[k]].relations);
    }
  };
  fill(corpus.train, Split::kTrain, 0, c.train);
  fill(corpus.valid, Split::kValid, c.train, c.train + c.valid);
  fill(corpus.test, Split::kTest, c.train + c.valid, total);
  return corpus;
}

std::string serialize_relations(const std::vector<RelationTuple>& relations) {
  nlohmann::json rels = nlohmann::json::array();
  for (const RelationTuple& r : relations) {
    rels.push_back({{"entity", r.entity}, {"value", r.value}, {"key", r.key}});
  }
  nlohmann::json doc;
  doc["relations"] = std::move(rels);
  return doc.dump();
}

void write_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const ToySplit* split : {&corpus.train, &corpus.valid, &corpus.test}) {
    const std::string tag(to_string(split->dataset.split));
    write_dataset(dir / (tag + ".jsonl"), split->dataset);
    std::ofstream out(dir / (tag + ".relations.jsonl"), std::ios::binary);
    if (!out) throw Error("cannot write relations for split " + tag);
    for (const auto& rels : split->relations) out << serialize_relations(rels) << '\n';
  }
}

std::vector<std::vector<RelationTuple>> read_relations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open relations file " + path.string());
  std::vector<std::vector<RelationTuple>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      std::vector<RelationTuple> rels;
      for (const auto& r : doc.at("relations")) {
        rels.push_back({r.at("entity").get<std::string>(), r.at("value").get<std::string>(),
                        r.at("key").get<std::string>()});
      }
      out.push_back(std::move(rels));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hiertab

#include "hiertab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "json.hpp"

#include "hiertab/error.hpp"

namespace hiertab {

std::vector<std::string> strip_eos(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const std::string& t : tokens) {
    if (t != kEosToken) out.push_back(t);
  }
  return out;
}

std::vector<RelationTuple> extract_relations(std::span<const std::string> tokens,
                                             const DataStructure& structure,
                                             const ExtractorOptions& options) {
  struct Known {
    const std::string* name;
    // value -> first key in sorted order
    std::map<std::string, std::string, std::less<>> key_of;
  };
  std::vector<Known> entities;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_name;
  for (const Entity& e : structure.entities) {
    const std::string* name = e.find(options.name_key);
    if (!name) continue;
    Known k{name, {}};
    for (const Record& r : e.records) {
      if (r.key == options.name_key) continue;
      auto [it, inserted] = k.key_of.emplace(r.value, r.key);
      if (!inserted && r.key < it->second) it->second = r.key;
    }
    by_name[*name].push_back(entities.size());
    entities.push_back(std::move(k));
  }

  std::vector<RelationTuple> out;
  std::set<RelationTuple> seen;
  struct Window {
    std::size_t entity;
    std::size_t last;  // last token index covered
  };
  std::vector<Window> open;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::string& tok = tokens[t];
    if (tok == kEosToken) continue;
    std::erase_if(open, [&](const Window& w) { return w.last < t; });
    for (const Window& w : open) {
      const Known& k = entities[w.entity];
      auto it = k.key_of.find(tok);
      if (it == k.key_of.end()) continue;
      RelationTuple rel{*k.name, tok, it->second};
      if (seen.insert(rel).second) out.push_back(std::move(rel));
    }
    if (auto it = by_name.find(tok); it != by_name.end()) {
      open.clear();  // a new mention ends the previous entity's window
      for (std::size_t e : it->second) open.push_back({e, t + options.window});
    }
  }
  return out;
}

double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references) {
  if (candidates.empty()) throw Error("bleu: no candidates");
  if (candidates.size() != references.size()) {
    throw Error("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                std::to_string(references.size()) + " references");
  }
  constexpr std::size_t kOrder = 4;
  constexpr double kSmooth = 1e-9;
  double matches[kOrder] = {}, totals[kOrder] = {};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    const auto& r = references[s];
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= kOrder; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cand_counts[{c.begin() + i, c.begin() + i + n}];
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kOrder; ++n) {
    const double m = matches[n] > 0.0 ? matches[n] : kSmooth;
    log_sum += std::log(m / std::max(totals[n], 1.0));
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / kOrder);
}

double co_similarity(std::span<const RelationTuple> generated, std::span<const RelationTuple> gold) {
  const std::size_t longest = std::max(generated.size(), gold.size());
  if (longest == 0) return 100.0;
  const double d = static_cast<double>(osa_distance(generated, gold));
  return 100.0 * (1.0 - d / static_cast<double>(longest));
}

RgScore rg_score(std::span<const RelationTuple> generated, const DataStructure& structure,
                 const ExtractorOptions& options) {
  const std::set<RelationTuple> unique(generated.begin(), generated.end());
  RgScore s;
  s.extracted = unique.size();
  for (const RelationTuple& rel : unique) {
    for (const Entity& e : structure.entities) {
      const std::string* name = e.find(options.name_key);
      const std::string* value = e.find(rel.key);
      if (name && *name == rel.entity && value && *value == rel.value) {
        ++s.correct;
        break;
      }
    }
  }
  return s;
}

CsScore cs_score(std::span<const RelationTuple> generated, std::span<const RelationTuple> gold) {
  const std::set<RelationTuple> g(generated.begin(), generated.end());
  const std::set<RelationTuple> r(gold.begin(), gold.end());
  std::size_t common = 0;
  for (const RelationTuple& rel : g) common += r.count(rel);
  CsScore s;
  s.no_generated = g.empty();
  s.no_gold = r.empty();
  s.precision = g.empty() ? 0.0 : 100.0 * static_cast<double>(common) / static_cast<double>(g.size());
  s.recall = r.empty() ? 0.0 : 100.0 * static_cast<double>(common) / static_cast<double>(r.size());
  return s;
}

double f1(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricsReport evaluate(const Dataset& dataset, std::span<const std::vector<std::string>> generations,
                       const ExtractorOptions& options) {
  if (generations.empty()) throw Error("evaluate: no generations");
  if (generations.size() != dataset.examples.size()) {
    throw Error("evaluate: " + std::to_string(generations.size()) + " generations for " +
                std::to_string(dataset.examples.size()) + " examples");
  }
  MetricsReport rep;
  rep.examples = generations.size();
  std::vector<std::vector<std::string>> refs;
  std::size_t correct = 0, extracted = 0;
  for (std::size_t i = 0; i < generations.size(); ++i) {
    const Example& ex = dataset.examples[i];
    refs.push_back(strip_eos(ex.description.tokens));
    const auto gen_rel = extract_relations(generations[i], ex.structure, options);
    const auto gold_rel = extract_relations(refs.back(), ex.structure, options);
    const RgScore rg = rg_score(gen_rel, ex.structure, options);
    const CsScore cs = cs_score(gen_rel, gold_rel);
    ExampleMetrics m;
    m.rg_count = rg.correct;
    m.rg_p = rg.extracted == 0 ? 0.0 : 100.0 * rg.correct / static_cast<double>(rg.extracted);
    m.cs_p = cs.precision;
    m.cs_r = cs.recall;
    m.co = co_similarity(gen_rel, gold_rel);
    m.extracted = gen_rel.size();
    m.gold = gold_rel.size();
    correct += rg.correct;
    extracted += rg.extracted;
    rep.no_extraction += rg.extracted == 0;
    rep.no_gold += cs.no_gold;
    rep.rg_count += static_cast<double>(rg.correct);
    rep.cs_p += m.cs_p;
    rep.cs_r += m.cs_r;
    rep.co += m.co;
    rep.per_example.push_back(m);
  }
  const double n = static_cast<double>(rep.examples);
  rep.bleu = bleu(generations, refs);
  rep.rg_p = extracted == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(extracted);
  rep.rg_count /= n;
  rep.cs_p /= n;
  rep.cs_r /= n;
  rep.co /= n;
  rep.cs_f1 = f1(rep.cs_p, rep.cs_r);
  return rep;
}

std::string MetricsReport::to_json() const {
  nlohmann::json doc;
  doc["bleu"] = bleu;
  doc["rg_p"] = rg_p;
  doc["rg_count"] = rg_count;
  doc["cs_p"] = cs_p;
  doc["cs_r"] = cs_r;
  doc["cs_f1"] = cs_f1;
  doc["co"] = co;
  doc["examples"] = examples;
  doc["no_extraction"] = no_extraction;
  doc["no_gold"] = no_gold;
  nlohmann::json per = nlohmann::json::array();
  for (const ExampleMetrics& m : per_example) {
    per.push_back({{"rg_p", m.rg_p}, {"rg_count", m.rg_count}, {"cs_p", m.cs_p},
                   {"cs_r", m.cs_r}, {"co", m.co}, {"extracted", m.extracted}, {"gold", m.gold}});
  }
  doc["per_example"] = std::move(per);
  return doc.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  MetricsReport r;
  r.bleu = doc.at("bleu");
  r.rg_p = doc.at("rg_p");
  r.rg_count = doc.at("rg_count");
  r.cs_p = doc.at("cs_p");
  r.cs_r = doc.at("cs_r");
  r.cs_f1 = doc.at("cs_f1");
  r.co = doc.at("co");
  r.examples = doc.at("examples");
  r.no_extraction = doc.at("no_extraction");
  r.no_gold = doc.at("no_gold");
  for (const auto& m : doc.at("per_example")) {
    r.per_example.push_back({m.at("rg_p"), m.at("rg_count"), m.at("cs_p"), m.at("cs_r"),
                             m.at("co"), m.at("extracted"), m.at("gold")});
  }
  return r;
}

std::string format_table(std::span<const ReportRow> rows) {
  std::size_t width = 8;
  for (const ReportRow& r : rows) width = std::max(width, r.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %8s %8s %8s\n", static_cast<int>(width),
                "model", "BLEU", "RG-P%", "RG-#", "CS-P%", "CS-R%", "F1", "CO");
  out += buf;
  for (const ReportRow& r : rows) {
    const MetricsReport& m = r.report;
    std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n",
                  static_cast<int>(width), r.name.c_str(), m.bleu, m.rg_p, m.rg_count, m.cs_p,
                  m.cs_r, m.cs_f1, m.co);
    out += buf;
  }
  return out;
}

}  // namespace hiertab

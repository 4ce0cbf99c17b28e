#pragma once

// Corpus BLEU and the extraction-based RG / CS / CO metrics.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hiertab/datamodel.hpp"

namespace hiertab {

struct RelationTuple {
  std::string entity;
  std::string value;
  std::string key;
  auto operator<=>(const RelationTuple&) const = default;
};

struct ExtractorOptions {
  std::size_t window = 20;
  /// Record key holding an entity's single-token name.
  std::string name_key = "NAME";
};

/// Rule-based extractor. A token equal to an entity's name opens a window
/// over the next `window` tokens, closed early by the next entity mention;
/// every token in an open window that equals
/// one of that entity's (non-name) values yields (entity, value, key), the
/// key being the first in sorted order when several match. Output keeps the
/// first occurrence of each triple, in text order. The end marker is ignored.
std::vector<RelationTuple> extract_relations(std::span<const std::string> tokens,
                                             const DataStructure& structure,
                                             const ExtractorOptions& options = {});

/// Corpus BLEU-4 in percent, with 1e-9 in place of zero n-gram match counts.
double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references);

/// Restricted Damerau-Levenshtein (optimal string alignment) distance with
/// unit costs. Unlike the unrestricted form it is not a metric: the
/// triangle inequality can fail (CA -> AC -> ABC).
template <typename T>
std::size_t osa_distance(std::span<const T> a, std::span<const T> b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
      std::size_t best = std::min({at(i - 1, j) + 1, at(i, j - 1) + 1, at(i - 1, j - 1) + cost});
      if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1]) {
        best = std::min(best, at(i - 2, j - 2) + 1);
      }
      at(i, j) = best;
    }
  }
  return at(n, m);
}

/// 100 * (1 - distance / max(|a|, |b|)); 100 when both are empty.
double co_similarity(std::span<const RelationTuple> generated, std::span<const RelationTuple> gold);

struct RgScore {
  std::size_t correct = 0;    // unique extracted triples supported by the table
  std::size_t extracted = 0;  // unique extracted triples
};
RgScore rg_score(std::span<const RelationTuple> generated, const DataStructure& structure,
                 const ExtractorOptions& options = {});

struct CsScore {
  double precision = 0.0;  // percent
  double recall = 0.0;     // percent
  bool no_generated = false;
  bool no_gold = false;
};
CsScore cs_score(std::span<const RelationTuple> generated, std::span<const RelationTuple> gold);

/// Harmonic mean; 0 when both are 0.
double f1(double precision, double recall);

struct ExampleMetrics {
  double rg_p = 0.0;
  std::size_t rg_count = 0;
  double cs_p = 0.0;
  double cs_r = 0.0;
  double co = 0.0;
  std::size_t extracted = 0;
  std::size_t gold = 0;
};

struct MetricsReport {
  double bleu = 0.0;
  double rg_p = 0.0;      // corpus: supported / extracted, over unique triples
  double rg_count = 0.0;  // mean supported triples per example
  double cs_p = 0.0;      // mean over examples
  double cs_r = 0.0;
  double cs_f1 = 0.0;     // harmonic mean of cs_p and cs_r
  double co = 0.0;        // mean over examples
  std::size_t examples = 0;
  std::size_t no_extraction = 0;  // generated text yielded no relation
  std::size_t no_gold = 0;        // reference yielded no relation
  std::vector<ExampleMetrics> per_example;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

/// Scores `generations` (tokens, without end marker) against the dataset's
/// descriptions and tables.
MetricsReport evaluate(const Dataset& dataset,
                       std::span<const std::vector<std::string>> generations,
                       const ExtractorOptions& options = {});

struct ReportRow {
  std::string name;
  MetricsReport report;
};

/// Aligned text table: name, BLEU, RG-P%, RG-#, CS-P%, CS-R%, F1, CO.
std::string format_table(std::span<const ReportRow> rows);

/// Description tokens without the end marker.
std::vector<std::string> strip_eos(const std::vector<std::string>& tokens);

}  // namespace hiertab

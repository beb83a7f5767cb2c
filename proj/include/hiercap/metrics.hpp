#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace hiercap {

using Sentence = std::vector<std::string>;

// Corpus BLEU-1..4: clipped n-gram precision pooled over the corpus,
// geometric mean over orders 1..n, brevity penalty against the closest
// reference length (shorter wins ties). No smoothing.
std::array<double, 4> bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);

// LCS F-measure with beta = 1.2, maximised over references.
double rouge_l(const Sentence& candidate, const std::vector<Sentence>& references, double beta = 1.2);
double rouge_l_corpus(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);

// CIDEr (base, no length penalty): tf-idf n-gram vectors, document
// frequency over the reference sets, mean over n = 1..4 of the average cosine
// to each reference, times 10. A single-image corpus falls back to idf = 1.
double cider(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);

struct MetricReport {
  std::array<double, 4> bleu{};
  double cider = 0.0;
  double rouge_l = 0.0;

  // Columns BLEU-1..4, METEOR (always null), CIDEr, ROUGE-L in that order.
  nlohmann::ordered_json to_json() const;
};

MetricReport score_corpus(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);
MetricReport score_corpus(const std::vector<std::string>& candidates,
                          const std::vector<std::vector<std::string>>& references);

}  // namespace hiercap

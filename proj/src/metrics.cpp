#include "hiercap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "hiercap/error.hpp"
#include "hiercap/vocab.hpp"

namespace hiercap {

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, double>;

Counts ngrams(const Sentence& s, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) c[NGram(s.begin() + i, s.begin() + i + n)] += 1.0;
  return c;
}

void check_corpus(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  if (candidates.empty()) throw ContractError("metrics: empty candidate set");
  if (candidates.size() != references.size()) throw ContractError("metrics: one reference set per candidate required");
  for (const auto& refs : references) {
    if (refs.empty()) throw ContractError("metrics: candidate without references");
  }
}

std::size_t lcs(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::array<double, 4> bleu(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  check_corpus(candidates, references);
  std::array<double, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Sentence& cand = candidates[i];
    cand_len += static_cast<double>(cand.size());
    std::size_t best = references[i][0].size();
    for (const auto& r : references[i]) {
      const auto d = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= 4; ++n) {
      const Counts cc = ngrams(cand, n);
      Counts max_ref;
      for (const auto& r : references[i]) {
        for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : cc) {
        total[n - 1] += c;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  std::array<double, 4> out{};
  if (cand_len == 0.0) return out;
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matched[n] == 0.0 || total[n] == 0.0) break;  // this and every higher order is 0
    log_sum += std::log(matched[n] / total[n]);
    out[n] = bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return out;
}

double rouge_l(const Sentence& candidate, const std::vector<Sentence>& references, double beta) {
  if (references.empty()) throw ContractError("rouge_l: no references");
  double best = 0.0;
  for (const auto& ref : references) {
    const double l = static_cast<double>(lcs(candidate, ref));
    if (l == 0.0) continue;
    const double p = l / static_cast<double>(candidate.size());
    const double r = l / static_cast<double>(ref.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

double rouge_l_corpus(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  check_corpus(candidates, references);
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

double cider(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  check_corpus(candidates, references);
  const double images = static_cast<double>(references.size());
  const bool degenerate = references.size() < 2;
  if (degenerate) std::cerr << "warning: CIDEr on a single-image corpus; using idf = 1\n";
  double total = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<NGram, double> df;
    for (const auto& refs : references) {
      std::set<NGram> seen;
      for (const auto& r : refs) {
        for (const auto& [g, c] : ngrams(r, n)) seen.insert(g);
      }
      for (const auto& g : seen) df[g] += 1.0;
    }
    auto vectorize = [&](const Sentence& s) {
      Counts v = ngrams(s, n);
      for (auto& [g, c] : v) {
        const auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : it->second;
        c *= degenerate ? 1.0 : std::log(images / d);
      }
      return v;
    };
    auto norm = [](const Counts& v) {
      double s = 0.0;
      for (const auto& [g, c] : v) s += c * c;
      return std::sqrt(s);
    };
    double order_sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const Counts cv = vectorize(candidates[i]);
      const double cn = norm(cv);
      double sim = 0.0;
      for (const auto& r : references[i]) {
        const Counts rv = vectorize(r);
        const double rn = norm(rv);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, c] : cv) {
          const auto it = rv.find(g);
          if (it != rv.end()) dot += c * it->second;
        }
        sim += dot / (cn * rn);
      }
      order_sum += sim / static_cast<double>(references[i].size());
    }
    total += order_sum / static_cast<double>(candidates.size());
  }
  return 10.0 * total / 4.0;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  for (std::size_t n = 0; n < 4; ++n) j["BLEU-" + std::to_string(n + 1)] = bleu[n];
  j["METEOR"] = nullptr;
  j["CIDEr"] = cider;
  j["ROUGE-L"] = rouge_l;
  return j;
}

MetricReport score_corpus(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  MetricReport r;
  r.bleu = bleu(candidates, references);
  r.cider = cider(candidates, references);
  r.rouge_l = rouge_l_corpus(candidates, references);
  return r;
}

MetricReport score_corpus(const std::vector<std::string>& candidates,
                          const std::vector<std::vector<std::string>>& references) {
  std::vector<Sentence> c;
  std::vector<std::vector<Sentence>> r;
  for (const auto& s : candidates) c.push_back(tokenize(s));
  for (const auto& refs : references) {
    auto& out = r.emplace_back();
    for (const auto& s : refs) out.push_back(tokenize(s));
  }
  return score_corpus(c, r);
}

}  // namespace hiercap

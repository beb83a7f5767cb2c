#include "hiercap/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "hiercap/error.hpp"

namespace hiercap {

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char ch : text) {
    switch (ch) {
      case '.':
      case ',':
      case '(':
      case ')':
      case '-':
        out.push_back(' ');
        break;
      case '&':
        out += " and ";
        break;
      default:
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::istringstream in(normalize_text(text));
  std::vector<std::string> tokens;
  for (std::string w; in >> w;) tokens.push_back(w);
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int min_count, bool strict) {
  if (corpus.empty()) throw ContractError("build_vocabulary: empty corpus");
  std::map<std::string, long> counts;
  for (const auto& caption : corpus) {
    for (auto& w : tokenize(caption)) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [w, c] : counts) {
    if (w == "NULL" || w == "START" || w == "END") continue;
    if (strict ? c > min_count : c >= min_count) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  v.tokens_ = {"NULL", "START", "END"};
  v.counts_ = {0, static_cast<long>(corpus.size()), static_cast<long>(corpus.size())};
  for (auto& [w, c] : kept) {
    v.tokens_.push_back(w);
    v.counts_.push_back(c);
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) throw VocabularyError("unknown token '" + token + "'");
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& caption) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(caption)) ids.push_back(id(w));
  ids.push_back(kEndId);
  return ids;
}

std::optional<std::vector<int>> Vocabulary::try_encode(const std::string& caption) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(caption)) {
    const auto it = index_.find(w);
    if (it == index_.end()) return std::nullopt;
    ids.push_back(it->second);
  }
  ids.push_back(kEndId);
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEndId) break;
    if (id == kNullId || id == kStartId) continue;
    words.push_back(token(id));
  }
  return join_tokens(words);
}

nlohmann::json Vocabulary::to_json() const {
  return {{"tokens", tokens_}, {"counts", counts_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  v.counts_ = j.at("counts").get<std::vector<long>>();
  if (v.tokens_.size() < 3 || v.tokens_[0] != "NULL" || v.tokens_[1] != "START" || v.tokens_[2] != "END" ||
      v.counts_.size() != v.tokens_.size()) {
    throw DataError("vocabulary json does not reserve NULL/START/END at ids 0-2");
  }
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i);
  return v;
}

}  // namespace hiercap

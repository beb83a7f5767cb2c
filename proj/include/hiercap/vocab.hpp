#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace hiercap {

inline constexpr int kNullId = 0;
inline constexpr int kStartId = 1;
inline constexpr int kEndId = 2;

// Lowercases, maps '.', ',', '(', ')', '-' to blanks and '&' to " and ".
std::string normalize_text(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  // Ids 0, 1, 2 are NULL, START, END. Remaining tokens are kept when their
  // corpus count exceeds min_count (or reaches it when strict is false) and
  // are numbered by descending count, ties in lexicographic order.
  static Vocabulary build(const std::vector<std::string>& corpus, int min_count = 5, bool strict = true);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // VocabularyError when unknown
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  long count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }

  // Word ids followed by END; VocabularyError on out-of-vocabulary words.
  std::vector<int> encode(const std::string& caption) const;
  std::optional<std::vector<int>> try_encode(const std::string& caption) const;
  // Words up to the first END, skipping NULL and START.
  std::string decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<long> counts_;
  std::map<std::string, int> index_;
};

}  // namespace hiercap

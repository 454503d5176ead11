#include "wwh/text.hpp"

#include <algorithm>
#include <cctype>

namespace wwh::text {

namespace {

// Function words that carry no persona content. Pronouns, auxiliaries,
// determiners, common prepositions and discourse fillers.
const std::vector<std::string> kStopwords = [] {
  std::vector<std::string> w = {
      "a",     "about", "all",   "also",  "am",    "an",    "and",   "any",    "are",
      "as",    "at",    "be",    "been",  "but",   "by",    "can",   "could",  "did",
      "do",    "does",  "doing", "dont",  "for",   "from",  "had",   "has",    "have",
      "he",    "her",   "here",  "him",   "his",   "how",   "i",     "if",     "im",
      "in",    "into",  "is",    "it",    "its",   "just",  "me",    "more",   "most",
      "my",    "no",    "not",   "now",   "of",    "oh",    "ok",    "okay",   "on",
      "or",    "our",   "out",   "really", "right", "she",  "should", "so",    "some",
      "still", "such",  "than",  "that",  "thats", "the",   "their", "them",  "then",
      "there", "these", "they",  "this",  "those", "to",    "too",   "up",     "us",
      "very",  "was",   "we",    "well",  "were",  "what",  "when",  "where",  "which",
      "while", "who",   "why",   "will",  "with",  "would", "yeah",  "yes",    "you",
      "youre", "your",  "yours"};
  std::sort(w.begin(), w.end());
  w.erase(std::unique(w.begin(), w.end()), w.end());
  return w;
}();

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c == '\'') continue;
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

bool is_stopword(std::string_view word) {
  return std::binary_search(kStopwords.begin(), kStopwords.end(), word);
}

const std::vector<std::string>& stopwords() { return kStopwords; }

std::vector<std::string> content_words(std::string_view text) {
  auto toks = tokenize(text);
  std::erase_if(toks, [](const std::string& w) { return is_stopword(w); });
  return toks;
}

std::set<std::string> content_word_set(std::string_view text) {
  auto words = content_words(text);
  return {words.begin(), words.end()};
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& w : a) inter += b.count(w);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace wwh::text

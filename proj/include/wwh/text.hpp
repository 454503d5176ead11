#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace wwh::text {

/// Lowercases, turns every non-alphanumeric byte into a separator and splits.
/// Apostrophes are dropped so "don't" becomes "dont".
std::vector<std::string> tokenize(std::string_view text);

/// Space-joins tokens.
std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

bool is_stopword(std::string_view word);

/// The shipped stopword list, sorted.
const std::vector<std::string>& stopwords();

/// Tokens of `text` that are not stopwords, in order (duplicates kept).
std::vector<std::string> content_words(std::string_view text);

/// Distinct content words.
std::set<std::string> content_word_set(std::string_view text);

/// |a ∩ b| / |a ∪ b|; 0 when both are empty.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

}  // namespace wwh::text

#include "wwh/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "wwh/error.hpp"
#include "wwh/rng.hpp"
#include "wwh/text.hpp"

namespace wwh {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s = {"<BOS>", "<EOS>",     "<SEP>",  "<USR>", "<AGT>", "<DEMO>",
                                             "<PERSONA>", "<PRTL>", "<CRTL>", "<PAD>", "<UNK>"};
  return s;
}

Vocabulary::Vocabulary() : tokens_(special_tokens()) { index(); }

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : text::tokenize(t)) ++counts[std::move(w)];
  }
  if (counts.empty()) throw Error("cannot build a vocabulary from empty corpora");
  std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = special_tokens();
  for (auto& [w, c] : words) {
    if (c >= min_count) tokens.push_back(w);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& sp = special_tokens();
  if (tokens.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens.begin())) {
    throw SchemaError("vocabulary must start with the special tokens in their fixed order");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  std::string bytes;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\r\n") != std::string::npos) {
      throw SchemaError("invalid vocabulary token at id " + std::to_string(i));
    }
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw SchemaError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
    bytes += tokens_[i];
    bytes += '\n';
  }
  hash_ = fnv1a64(bytes);
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("token id " + std::to_string(id) + " out of vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view word) const { return ids_.count(std::string(word)) > 0; }

int Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? tok::UNK : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view t) const {
  std::vector<int> out;
  for (const auto& w : text::tokenize(t)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  write(f);
  if (!f) throw IoError("write failed for " + path.string());
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return read(f);
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << h;
  return s.str();
}

}  // namespace wwh

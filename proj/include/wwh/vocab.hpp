#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace wwh {

/// Fixed ids of the control and framing tokens. Word ids start at kNumSpecial.
namespace tok {
inline constexpr int BOS = 0;
inline constexpr int EOS = 1;
inline constexpr int SEP = 2;
inline constexpr int USR = 3;
inline constexpr int AGT = 4;
inline constexpr int DEMO = 5;
inline constexpr int PERSONA = 6;
inline constexpr int PRTL = 7;
inline constexpr int CRTL = 8;
inline constexpr int PAD = 9;
inline constexpr int UNK = 10;
inline constexpr int kNumSpecial = 11;
}  // namespace tok

const std::vector<std::string>& special_tokens();

/// Word-level token table. Frozen after construction.
class Vocabulary {
 public:
  Vocabulary();

  /// Specials, then every word type with count >= min_count, ordered by
  /// descending count and then lexicographically. Throws Error on empty input.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_count = 1);

  /// Table in id order. The first kNumSpecial entries must be the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  bool contains(std::string_view word) const;
  /// UNK for unknown words.
  int id(std::string_view word) const;
  static bool is_special(int id) { return id >= 0 && id < tok::kNumSpecial; }

  /// Tokenizes with text::tokenize and maps to ids.
  std::vector<int> encode(std::string_view text) const;
  /// Space-joined tokens.
  std::string decode(std::span<const int> ids) const;

  /// FNV-1a over the vocabulary file bytes.
  std::uint64_t hash() const { return hash_; }

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary read(std::istream& in);
  static Vocabulary load(const std::filesystem::path& path);

 private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::uint64_t hash_ = 0;
};

std::string hash_hex(std::uint64_t h);

}  // namespace wwh

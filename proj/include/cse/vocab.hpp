#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "cse/common.hpp"

namespace cse {

// Fixed subword vocabulary with greedy longest-match wordpiece tokenization.
// Continuation pieces carry a "##" prefix. Ids are stable: the file order (or
// build order) is the id order, and the reserved tokens below are always
// present.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kBos = 4;
  static constexpr int kEos = 5;
  static constexpr int kNumReserved = 6;

  // One token per line, id = line index. All reserved tokens must appear.
  static Vocabulary from_file(const std::filesystem::path& path);
  // Deterministic desk-scale vocabulary: reserved tokens, then single
  // characters (word-initial and "##" continuations), then whole words by
  // descending frequency.
  static Vocabulary build(const std::vector<std::string>& texts,
                          std::size_t max_size);

  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  static bool is_special(int id) { return id >= 0 && id < kNumReserved; }

  // FNV-1a over all tokens in id order; used as the checkpoint vocabulary
  // identifier.
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path) const;

  // Normalization: lowercase, punctuation split off as single-char tokens,
  // whitespace collapsed.
  static std::vector<std::string> normalize_words(const std::string& text);

  // Greedy wordpiece over normalized words. Unknown words map to [UNK].
  std::vector<int> encode(const std::string& text) const;
  std::vector<int> encode_word(const std::string& word) const;
  // Joins tokens with spaces, merging "##" continuations. Special tokens are
  // skipped when skip_special is set.
  std::string decode(const std::vector<int>& ids, bool skip_special = true) const;

 private:
  Vocabulary() = default;
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Subword-token corpus frequencies; absent tokens default to 1.
class FrequencyTable {
 public:
  FrequencyTable() = default;
  void add(int id, long long n = 1);
  long long freq(int id) const;

  // TSV "token<TAB>count" resolved against the vocabulary.
  static FrequencyTable from_file(const std::filesystem::path& path,
                                  const Vocabulary& vocab);
  void save(const std::filesystem::path& path, const Vocabulary& vocab) const;

 private:
  std::unordered_map<int, long long> counts_;
};

}  // namespace cse

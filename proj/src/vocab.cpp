#include "cse/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace cse {

namespace {
const char* kReservedTokens[Vocabulary::kNumReserved] = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"};

bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }
}  // namespace

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token))
    throw DataError("vocabulary: duplicate token '" + token + "'");
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocabulary: cannot open " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.add(line);
  }
  for (int i = 0; i < kNumReserved; ++i) {
    auto it = v.ids_.find(kReservedTokens[i]);
    if (it == v.ids_.end() || it->second != i)
      throw DataError(std::string("vocabulary: reserved token ") +
                      kReservedTokens[i] + " must be at id " +
                      std::to_string(i));
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts,
                             std::size_t max_size) {
  Vocabulary v;
  for (int i = 0; i < kNumReserved; ++i) v.add(kReservedTokens[i]);

  std::map<std::string, long long> word_freq;
  std::map<std::string, long long> char_freq;
  for (const auto& t : texts)
    for (const auto& w : normalize_words(t)) {
      ++word_freq[w];
      for (std::size_t i = 0; i < w.size(); ++i) {
        std::string piece(1, w[i]);
        ++char_freq[i == 0 ? piece : "##" + piece];
      }
    }
  // single characters first so every word has a segmentation
  for (const auto& [piece, n] : char_freq) {
    (void)n;
    if (v.size() >= max_size) break;
    if (!v.ids_.count(piece)) v.add(piece);
  }
  std::vector<std::pair<std::string, long long>> words(word_freq.begin(),
                                                       word_freq.end());
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [w, n] : words) {
    (void)n;
    if (v.size() >= max_size) break;
    if (!v.ids_.count(w)) v.add(w);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size()))
    throw std::out_of_range("vocabulary: id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}


std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& t : tokens_) {
    for (unsigned char c : t) mix(c);
    mix('\n');
  }
  return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("vocabulary: cannot write " + path.string());
  for (const auto& t : tokens_) out << t << "\n";
}

std::vector<std::string> Vocabulary::normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

std::vector<int> Vocabulary::encode_word(const std::string& word) const {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t end = word.size();
    int found = -1;
    while (end > pos) {
      std::string piece = word.substr(pos, end - pos);
      if (pos > 0) piece = "##" + piece;
      auto it = ids_.find(piece);
      if (it != ids_.end()) {
        found = it->second;
        break;
      }
      --end;
    }
    if (found < 0) return {kUnk};  // no segmentation: whole word is unknown
    out.push_back(found);
    pos = end;
  }
  return out;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : normalize_words(text)) {
    auto ids = encode_word(w);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids,
                               bool skip_special) const {
  std::string out;
  for (int id : ids) {
    if (skip_special && is_special(id)) continue;
    const std::string& t = token(id);
    if (t.rfind("##", 0) == 0 && !out.empty() && out.back() != ' ') {
      out += t.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += t;
    }
  }
  return out;
}

void FrequencyTable::add(int id, long long n) { counts_[id] += n; }

long long FrequencyTable::freq(int id) const {
  auto it = counts_.find(id);
  return it == counts_.end() ? 1 : std::max<long long>(1, it->second);
}

FrequencyTable FrequencyTable::from_file(const std::filesystem::path& path,
                                         const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("frequency table: cannot open " + path.string());
  FrequencyTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("frequency table: line " + std::to_string(lineno) +
                      " is not token<TAB>count");
    std::string tok = line.substr(0, tab);
    long long n = 0;
    try {
      n = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DataError("frequency table: line " + std::to_string(lineno) +
                      " has a bad count");
    }
    int id = vocab.id(tok);
    if (id == Vocabulary::kUnk && tok != vocab.token(Vocabulary::kUnk))
      throw DataError("frequency table: line " + std::to_string(lineno) +
                      " token '" + tok + "' not in vocabulary");
    table.add(id, n);
  }
  return table;
}

void FrequencyTable::save(const std::filesystem::path& path,
                          const Vocabulary& vocab) const {
  std::ofstream out(path);
  if (!out) throw DataError("frequency table: cannot write " + path.string());
  std::map<int, long long> ordered(counts_.begin(), counts_.end());
  for (const auto& [id, n] : ordered)
    out << vocab.token(id) << "\t" << n << "\n";
}

}  // namespace cse

#include "cse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace cse {

using nlohmann::json;

namespace {

[[noreturn]] void line_error(const std::filesystem::path& path, long long line,
                             const std::string& what) {
  throw DataError(path.string() + ": line " + std::to_string(line) + ": " +
                  what);
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

DialogueExample parse_example(const json& j) {
  if (!j.is_object()) throw std::runtime_error("record is not a JSON object");
  DialogueExample ex;
  ex.conversation_id = j.at("conversation_id").get<std::string>();
  ex.turn_index = j.at("turn_index").get<int>();
  if (ex.turn_index < 1) throw std::runtime_error("turn_index must be >= 1");
  for (const auto& q : j.at("queries")) {
    ex.queries.push_back(q.get<std::string>());
  }
  if (ex.queries.empty()) throw std::runtime_error("queries must be non-empty");
  if (static_cast<int>(ex.queries.size()) > ex.turn_index) {
    throw std::runtime_error("more queries than turn_index");
  }
  for (const auto& p : j.at("passages")) {
    Passage pas;
    pas.passage_id = p.at("id").get<std::string>();
    pas.text = p.at("text").get<std::string>();
    pas.relevant = p.value("relevant", false);
    if (blank(pas.text)) throw std::runtime_error("passage text is blank");
    ex.passages.push_back(std::move(pas));
  }
  if (ex.passages.empty()) {
    throw std::runtime_error("passages must be non-empty");
  }
  ex.response = j.value("response", std::string());
  return ex;
}

}  // namespace

std::vector<DialogueExample> load_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path.string());
  std::vector<DialogueExample> out;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) line_error(path, lineno, "invalid JSON");
    try {
      out.push_back(parse_example(j));
    } catch (const std::exception& e) {
      line_error(path, lineno, e.what());
    }
  }
  return out;
}

void write_examples(const std::filesystem::path& path,
                    const std::vector<DialogueExample>& examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file: " + path.string());
  for (const auto& ex : examples) {
    json passages = json::array();
    for (const auto& p : ex.passages) {
      passages.push_back(
          {{"id", p.passage_id}, {"text", p.text}, {"relevant", p.relevant}});
    }
    json j = {{"conversation_id", ex.conversation_id},
              {"turn_index", ex.turn_index},
              {"queries", ex.queries},
              {"passages", passages},
              {"response", ex.response}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

EncodedExample encode_example(const DialogueExample& ex,
                              const Vocabulary& vocab,
                              const LengthLimits& limits) {
  if (limits.max_query_tokens < 1 || limits.max_passage_tokens < 1 ||
      limits.max_response_tokens < 2) {
    throw std::invalid_argument("length limits too small");
  }
  EncodedExample enc;
  enc.conversation_id = ex.conversation_id;
  enc.turn_index = ex.turn_index;

  enc.query_ids.push_back(Vocabulary::kCls);
  for (std::size_t t = 0; t < ex.queries.size(); ++t) {
    if (t > 0) enc.query_ids.push_back(Vocabulary::kSep);
    const auto ids = vocab.encode(ex.queries[t]);
    enc.query_ids.insert(enc.query_ids.end(), ids.begin(), ids.end());
  }
  if (static_cast<int>(enc.query_ids.size()) > limits.max_query_tokens) {
    // Keep the most recent context: [CLS] plus the tail.
    std::vector<int> kept;
    kept.reserve(limits.max_query_tokens);
    kept.push_back(Vocabulary::kCls);
    kept.insert(kept.end(),
                enc.query_ids.end() - (limits.max_query_tokens - 1),
                enc.query_ids.end());
    enc.query_ids = std::move(kept);
  }
  enc.query_mask.assign(enc.query_ids.size(), 1);
  if (std::none_of(enc.query_ids.begin(), enc.query_ids.end(),
                   [](int id) { return !Vocabulary::is_special(id); })) {
    throw DataError("example " + ex.conversation_id +
                    ": query has no usable tokens");
  }

  for (const auto& p : ex.passages) {
    std::vector<int> ids;
    ids.push_back(Vocabulary::kCls);
    const auto body = vocab.encode(p.text);
    ids.insert(ids.end(), body.begin(), body.end());
    if (static_cast<int>(ids.size()) > limits.max_passage_tokens) {
      ids.resize(limits.max_passage_tokens);
    }
    if (std::none_of(ids.begin(), ids.end(),
                     [](int id) { return !Vocabulary::is_special(id); })) {
      throw DataError("example " + ex.conversation_id + ": passage " +
                      p.passage_id + " has no usable tokens");
    }
    enc.passage_masks.emplace_back(ids.size(), 1);
    enc.passage_ids.push_back(std::move(ids));
    enc.passage_names.push_back(p.passage_id);
    enc.relevance.push_back(p.relevant ? 1 : 0);
  }

  if (!blank(ex.response)) {
    auto body = vocab.encode(ex.response);
    const int room = limits.max_response_tokens - 2;
    if (static_cast<int>(body.size()) > room) body.resize(room);
    enc.response_ids.push_back(Vocabulary::kBos);
    enc.response_ids.insert(enc.response_ids.end(), body.begin(), body.end());
    enc.response_ids.push_back(Vocabulary::kEos);
  }
  return enc;
}

std::vector<int> content_mask_of(const std::vector<int>& ids) {
  std::vector<int> mask(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    mask[i] = Vocabulary::is_special(ids[i]) ? 0 : 1;
  }
  return mask;
}

WeakSupportLabels compute_weak_labels(
    const std::vector<std::vector<int>>& passage_ids,
    const std::vector<int>& response_ids, const FrequencyTable& freq,
    const std::vector<int>& windows) {
  std::unordered_set<int> in_response;
  for (int id : response_ids) {
    if (!Vocabulary::is_special(id)) in_response.insert(id);
  }
  if (in_response.empty()) {
    throw std::invalid_argument(
        "weak labels undefined for an empty response");
  }

  const double e = std::exp(1.0);
  WeakSupportLabels labels;
  labels.y.resize(passage_ids.size());
  labels.c.resize(passage_ids.size());

  // Raw confidences; normalized afterwards by the max over the whole
  // candidate set so the weights are comparable across passages.
  double max_raw = 0.0;
  std::vector<std::vector<double>> raw(passage_ids.size());
  for (std::size_t k = 0; k < passage_ids.size(); ++k) {
    const auto& ids = passage_ids[k];
    const int len = static_cast<int>(ids.size());
    labels.y[k].assign(len, 0);
    labels.c[k].assign(len, 1.0);
    raw[k].assign(len, 0.0);
    for (int i = 0; i < len; ++i) {
      if (Vocabulary::is_special(ids[i])) continue;
      if (!in_response.count(ids[i])) continue;
      labels.y[k][i] = 1;
      double value = 1.0 / std::log(static_cast<double>(freq.freq(ids[i])) + e);
      for (int n : windows) {
        int hits = 0;
        const int lo = std::max(0, i - n);
        const int hi = std::min(len - 1, i + n);
        for (int j = lo; j <= hi; ++j) {
          if (in_response.count(ids[j])) ++hits;
        }
        value *= static_cast<double>(hits);
      }
      raw[k][i] = value;
      max_raw = std::max(max_raw, value);
    }
  }

  for (std::size_t k = 0; k < passage_ids.size(); ++k) {
    for (std::size_t i = 0; i < raw[k].size(); ++i) {
      if (!labels.y[k][i]) continue;
      labels.c[k][i] =
          (windows.empty() || max_raw <= 0.0) ? 1.0 : raw[k][i] / max_raw;
    }
  }
  return labels;
}

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    out.push_back(w);
  }
  return out;
}

std::size_t count_ws_tokens(const std::string& text) {
  std::istringstream in(text);
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

StatsReport corpus_statistics(const std::vector<DialogueExample>& examples,
                              long long common_threshold) {
  if (examples.empty()) {
    throw std::invalid_argument("corpus statistics need at least one example");
  }
  StatsReport rep;
  rep.num_examples = static_cast<long long>(examples.size());

  // Lengths (plain whitespace tokens, no normalization).
  double query_sum = 0;
  double answer_sum = 0;
  long long answer_n = 0;
  double passage_sum = 0;
  long long passage_n = 0;
  for (const auto& ex : examples) {
    query_sum += static_cast<double>(count_ws_tokens(ex.queries.back()));
    const auto rlen = count_ws_tokens(ex.response);
    if (rlen > 0) {
      answer_sum += static_cast<double>(rlen);
      ++answer_n;
    }
    for (const auto& p : ex.passages) {
      passage_sum += static_cast<double>(count_ws_tokens(p.text));
      ++passage_n;
    }
  }
  rep.query_length = query_sum / static_cast<double>(examples.size());
  rep.answer_length =
      answer_n ? answer_sum / static_cast<double>(answer_n) : 0.0;
  rep.passage_length =
      passage_n ? passage_sum / static_cast<double>(passage_n) : 0.0;

  // Document frequencies over all candidate passages for TF-IDF.
  std::unordered_map<std::string, long long> df;
  for (const auto& ex : examples) {
    for (const auto& p : ex.passages) {
      std::set<std::string> uniq;
      for (const auto& w : words_of(p.text)) uniq.insert(w);
      for (const auto& w : uniq) ++df[w];
    }
  }
  const double n_docs = static_cast<double>(passage_n);
  auto idf = [&](const std::string& w) {
    const auto it = df.find(w);
    const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + n_docs) / (1.0 + d)) + 1.0;
  };

  double sim_sum = 0;
  long long sim_n = 0;
  for (const auto& ex : examples) {
    if (ex.passages.size() < 2) continue;
    std::vector<std::map<std::string, double>> vecs;
    for (const auto& p : ex.passages) {
      std::map<std::string, double> v;
      for (const auto& w : words_of(p.text)) v[w] += 1.0;
      double norm = 0;
      for (auto& [w, tf] : v) {
        tf *= idf(w);
        norm += tf * tf;
      }
      norm = std::sqrt(norm);
      if (norm > 0) {
        for (auto& [w, tf] : v) tf /= norm;
      }
      vecs.push_back(std::move(v));
    }
    double pair_sum = 0;
    long long pairs = 0;
    for (std::size_t a = 0; a < vecs.size(); ++a) {
      for (std::size_t b = a + 1; b < vecs.size(); ++b) {
        double dot = 0;
        for (const auto& [w, tf] : vecs[a]) {
          const auto it = vecs[b].find(w);
          if (it != vecs[b].end()) dot += tf * it->second;
        }
        pair_sum += dot;
        ++pairs;
      }
    }
    sim_sum += pair_sum / static_cast<double>(pairs);
    ++sim_n;
  }
  rep.pairwise_passage_similarity =
      sim_n ? 100.0 * sim_sum / static_cast<double>(sim_n) : 0.0;

  // Answer/passage n-gram overlap, counted per answer n-gram position so the
  // ratios are monotone non-increasing in n.
  for (int n = 1; n <= 4; ++n) {
    double ratio_sum = 0;
    long long ratio_n = 0;
    for (const auto& ex : examples) {
      const auto answer = words_of(ex.response);
      if (static_cast<int>(answer.size()) < n) continue;
      std::set<std::vector<std::string>> grams;
      for (const auto& p : ex.passages) {
        const auto toks = words_of(p.text);
        for (int i = 0; i + n <= static_cast<int>(toks.size()); ++i) {
          grams.insert(
              std::vector<std::string>(toks.begin() + i, toks.begin() + i + n));
        }
      }
      long long hits = 0;
      const long long total = static_cast<long long>(answer.size()) - n + 1;
      for (long long i = 0; i < total; ++i) {
        std::vector<std::string> g(answer.begin() + i, answer.begin() + i + n);
        if (grams.count(g)) ++hits;
      }
      ratio_sum += static_cast<double>(hits) / static_cast<double>(total);
      ++ratio_n;
    }
    rep.ngram_overlap[n - 1] =
        ratio_n ? 100.0 * ratio_sum / static_cast<double>(ratio_n) : 0.0;
  }

  // Common words: frequency over every word occurrence in the corpus.
  std::unordered_map<std::string, long long> word_freq;
  for (const auto& ex : examples) {
    for (const auto& q : ex.queries) {
      for (const auto& w : words_of(q)) ++word_freq[w];
    }
    for (const auto& p : ex.passages) {
      for (const auto& w : words_of(p.text)) ++word_freq[w];
    }
    for (const auto& w : words_of(ex.response)) ++word_freq[w];
  }
  auto common_ratio = [&](const std::vector<std::string>& toks) {
    if (toks.empty()) return -1.0;
    long long common = 0;
    for (const auto& w : toks) {
      if (word_freq[w] >= common_threshold) ++common;
    }
    return static_cast<double>(common) / static_cast<double>(toks.size());
  };
  double qr_sum = 0, ar_sum = 0;
  long long qr_n = 0, ar_n = 0;
  for (const auto& ex : examples) {
    const double qr = common_ratio(words_of(ex.queries.back()));
    if (qr >= 0) {
      qr_sum += qr;
      ++qr_n;
    }
    const double ar = common_ratio(words_of(ex.response));
    if (ar >= 0) {
      ar_sum += ar;
      ++ar_n;
    }
  }
  rep.query_common_ratio = qr_n ? 100.0 * qr_sum / static_cast<double>(qr_n) : 0.0;
  rep.answer_common_ratio = ar_n ? 100.0 * ar_sum / static_cast<double>(ar_n) : 0.0;
  return rep;
}

nlohmann::json StatsReport::to_json() const {
  return json{{"#query length", round2(query_length)},
              {"#answer length", round2(answer_length)},
              {"#passage length", round2(passage_length)},
              {"#pairwise passage similarity", round2(pairwise_passage_similarity)},
              {"#1-gram overlap", round2(ngram_overlap[0])},
              {"#2-gram overlap", round2(ngram_overlap[1])},
              {"#3-gram overlap", round2(ngram_overlap[2])},
              {"#4-gram overlap", round2(ngram_overlap[3])},
              {"#query common words ratio", round2(query_common_ratio)},
              {"#answer common words ratio", round2(answer_common_ratio)}};
}

}  // namespace cse

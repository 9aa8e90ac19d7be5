#include "cse/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_set>

namespace cse {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size();
       ++i) {
    std::vector<std::string> gram(tokens.begin() + static_cast<long>(i),
                                  tokens.begin() + static_cast<long>(i) + n);
    ++counts[std::move(gram)];
  }
  return counts;
}

// Clipped overlap and hypothesis n-gram total.
std::pair<long long, long long> clipped_overlap(
    const std::vector<std::string>& hypothesis,
    const std::vector<std::string>& reference, int n) {
  const NgramCounts h = ngram_counts(hypothesis, n);
  const NgramCounts r = ngram_counts(reference, n);
  long long overlap = 0;
  long long total = 0;
  for (const auto& [gram, count] : h) {
    total += count;
    const auto it = r.find(gram);
    if (it != r.end()) overlap += std::min(count, it->second);
  }
  return {overlap, total};
}

double f1(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

long long lcs_length(const std::vector<std::string>& a,
                     const std::vector<std::string>& b) {
  std::vector<long long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double round2(double percentage) {
  return std::round(percentage * 100.0) / 100.0;
}

}  // namespace

std::vector<std::string> normalize_for_metrics(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char ch : text) {
    if (std::ispunct(ch)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(ch)));
  }
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    std::size_t j = i;
    while (j < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[j]))) ++j;
    if (j > i) tokens.push_back(cleaned.substr(i, j - i));
    i = j;
  }
  return tokens;
}

double rouge_n(const std::vector<std::string>& hypothesis,
               const std::vector<std::string>& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const auto [overlap, h_total] = clipped_overlap(hypothesis, reference, n);
  const long long r_total =
      static_cast<long long>(reference.size()) >= n
          ? static_cast<long long>(reference.size()) - n + 1
          : 0;
  if (h_total == 0 || r_total == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(h_total);
  const double r = static_cast<double>(overlap) / static_cast<double>(r_total);
  return f1(p, r);
}

double rouge_l(const std::vector<std::string>& hypothesis,
               const std::vector<std::string>& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(hypothesis, reference));
  const double p = lcs / static_cast<double>(hypothesis.size());
  const double r = lcs / static_cast<double>(reference.size());
  return f1(p, r);
}

double bleu(const std::vector<std::string>& hypothesis,
            const std::vector<std::string>& reference, bool smooth) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    const auto [overlap, total] = clipped_overlap(hypothesis, reference, n);
    double p;
    if (smooth) {
      p = static_cast<double>(overlap + 1) / static_cast<double>(total + 1);
    } else {
      if (overlap == 0) return 0.0;
      p = static_cast<double>(overlap) / static_cast<double>(total);
    }
    log_sum += 0.25 * std::log(p);
  }
  const double h = static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(reference.size());
  const double bp = h >= r ? 1.0 : std::exp(1.0 - r / h);
  return bp * std::exp(log_sum);
}

RankingScores ranking_metrics(const std::vector<int>& ranking,
                              const std::vector<int>& relevance) {
  const auto n = ranking.size();
  if (n != relevance.size()) {
    throw std::invalid_argument("ranking_metrics: not a permutation");
  }
  std::unordered_set<int> seen;
  for (int id : ranking) {
    if (id < 0 || static_cast<std::size_t>(id) >= n || !seen.insert(id).second) {
      throw std::invalid_argument("ranking_metrics: duplicate or unknown id");
    }
  }
  long long total_relevant = 0;
  for (int r : relevance) {
    if (r != 0 && r != 1) {
      throw std::invalid_argument("ranking_metrics: relevance must be 0/1");
    }
    total_relevant += r;
  }
  RankingScores out;
  if (total_relevant == 0) return out;

  long long hits = 0;
  double ap_sum = 0.0;
  double dcg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int rel = relevance[static_cast<std::size_t>(ranking[i])];
    if (rel == 1) {
      ++hits;
      const double rank = static_cast<double>(i + 1);
      ap_sum += static_cast<double>(hits) / rank;
      dcg += 1.0 / std::log2(rank + 1.0);
      if (i < 5) out.recall_at_5 += 1.0;
    }
  }
  out.ap = ap_sum / static_cast<double>(total_relevant);
  out.recall_at_5 /= static_cast<double>(total_relevant);
  double idcg = 0.0;
  for (long long i = 1; i <= total_relevant; ++i) {
    idcg += 1.0 / std::log2(static_cast<double>(i) + 1.0);
  }
  out.ndcg = dcg / idcg;
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  return nlohmann::json{{"rouge1", round2(rouge1 * 100.0)},
                        {"rouge2", round2(rouge2 * 100.0)},
                        {"rougeL", round2(rougeL * 100.0)},
                        {"bleu", round2(bleu * 100.0)},
                        {"map", round2(map * 100.0)},
                        {"recall_at_5", round2(recall_at_5 * 100.0)},
                        {"ndcg", round2(ndcg * 100.0)},
                        {"generation_count", generation_count},
                        {"ranking_count", ranking_count}};
}

void MetricsAccumulator::add_generation(const std::string& hypothesis,
                                        const std::string& reference,
                                        bool smooth_bleu) {
  const auto h = normalize_for_metrics(hypothesis);
  const auto r = normalize_for_metrics(reference);
  sums_.rouge1 += rouge_n(h, r, 1);
  sums_.rouge2 += rouge_n(h, r, 2);
  sums_.rougeL += rouge_l(h, r);
  sums_.bleu += bleu(h, r, smooth_bleu);
  ++sums_.generation_count;
}

void MetricsAccumulator::add_ranking(const std::vector<int>& ranking,
                                     const std::vector<int>& relevance) {
  const RankingScores s = ranking_metrics(ranking, relevance);
  sums_.map += s.ap;
  sums_.recall_at_5 += s.recall_at_5;
  sums_.ndcg += s.ndcg;
  ++sums_.ranking_count;
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport r = sums_;
  if (r.generation_count > 0) {
    const double n = static_cast<double>(r.generation_count);
    r.rouge1 /= n;
    r.rouge2 /= n;
    r.rougeL /= n;
    r.bleu /= n;
  }
  if (r.ranking_count > 0) {
    const double n = static_cast<double>(r.ranking_count);
    r.map /= n;
    r.recall_at_5 /= n;
    r.ndcg /= n;
  }
  return r;
}

}  // namespace cse

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace cse {

// Shared normalization for generation metrics: lowercase, drop punctuation
// characters, split on whitespace.
std::vector<std::string> normalize_for_metrics(const std::string& text);

// Clipped n-gram overlap F1. Empty hypothesis or reference scores 0.
double rouge_n(const std::vector<std::string>& hypothesis,
               const std::vector<std::string>& reference, int n);

// Longest-common-subsequence F1.
double rouge_l(const std::vector<std::string>& hypothesis,
               const std::vector<std::string>& reference);

// Geometric mean of clipped n-gram precisions (n = 1..4, uniform weights)
// times the brevity penalty min(1, e^{1-r/h}). Without smoothing any zero
// precision zeroes the score; with smoothing every precision is add-one
// smoothed: (overlap+1)/(total+1).
double bleu(const std::vector<std::string>& hypothesis,
            const std::vector<std::string>& reference, bool smooth = false);

struct RankingScores {
  double ap = 0.0;
  double recall_at_5 = 0.0;
  double ndcg = 0.0;
};

// `ranking` must be a permutation of 0..|relevance|-1 (duplicates or
// out-of-range ids throw); relevance[id] in {0,1}. With no relevant item all
// three scores are 0. NDCG uses binary gains over the full list,
// DCG = sum rel_i / log2(i+1) with 1-based ranks.
RankingScores ranking_metrics(const std::vector<int>& ranking,
                              const std::vector<int>& relevance);

// Arithmetic means of per-example scores; fractions in [0,1].
struct MetricsReport {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  double bleu = 0.0;
  double map = 0.0;
  double recall_at_5 = 0.0;
  double ndcg = 0.0;
  long long generation_count = 0;
  long long ranking_count = 0;

  // Percentages rounded to 2 decimals, keyed rouge1/rouge2/rougeL/bleu/map/
  // recall_at_5/ndcg, plus the two example counts.
  nlohmann::json to_json() const;
};

class MetricsAccumulator {
 public:
  // Normalizes both sides, then scores ROUGE-1/2/L and BLEU.
  void add_generation(const std::string& hypothesis,
                      const std::string& reference, bool smooth_bleu = false);
  void add_ranking(const std::vector<int>& ranking,
                   const std::vector<int>& relevance);
  MetricsReport report() const;

 private:
  MetricsReport sums_;
};

}  // namespace cse

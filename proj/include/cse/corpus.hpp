#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cse/common.hpp"
#include "cse/vocab.hpp"

#include <json.hpp>

namespace cse {

struct Passage {
  std::string passage_id;
  std::string text;
  bool relevant = false;
};

// One conversation turn: the query history (oldest first, last element is the
// current query), the candidate passages, and the gold response (may be empty
// at inference time).
struct DialogueExample {
  std::string conversation_id;
  int turn_index = 1;
  std::vector<std::string> queries;
  std::vector<Passage> passages;
  std::string response;
};

std::vector<DialogueExample> load_examples(const std::filesystem::path& path);
void write_examples(const std::filesystem::path& path,
                    const std::vector<DialogueExample>& examples);

struct LengthLimits {
  int max_query_tokens = 128;     // L_Q, including the leading [CLS]
  int max_passage_tokens = 128;   // L_D, including the leading [CLS]
  int max_response_tokens = 64;   // including [BOS] and [EOS]
};

struct EncodedExample {
  std::string conversation_id;
  int turn_index = 1;
  std::vector<int> query_ids;  // [CLS] first; turns joined with [SEP]
  std::vector<int> query_mask;
  std::vector<std::string> passage_names;
  std::vector<std::vector<int>> passage_ids;  // each starts with [CLS]
  std::vector<std::vector<int>> passage_masks;
  std::vector<int> relevance;        // 0/1 per passage
  std::vector<int> response_ids;     // [BOS] ... [EOS]; empty when absent
};

// Deterministic. Query history keeps the tail on truncation (most recent
// context); passages keep the head.
EncodedExample encode_example(const DialogueExample& ex,
                              const Vocabulary& vocab,
                              const LengthLimits& limits);

// Content mask (1 at non-special tokens) for a token id sequence.
std::vector<int> content_mask_of(const std::vector<int>& ids);

struct WeakSupportLabels {
  // Aligned with the passages of one example: y[k][i] in {0,1},
  // c[k][i] in (0,1]. c is 1 (and ignored by the loss) where y=0.
  std::vector<std::vector<int>> y;
  std::vector<std::vector<double>> c;
};

// Weak supporting-token labels for one example's candidate set.
// y=1 iff the token occurs in the response (special tokens excluded).
// Raw confidence: 1/log(freq+e) times the product over window sizes of the
// count of window positions whose token occurs in the response; normalized
// by the max over positive tokens of the candidate set, so c is in (0,1].
// An empty window set degenerates to membership labeling with c=1.
WeakSupportLabels compute_weak_labels(
    const std::vector<std::vector<int>>& passage_ids,
    const std::vector<int>& response_ids, const FrequencyTable& freq,
    const std::vector<int>& windows);

struct StatsReport {
  double query_length = 0;
  double answer_length = 0;
  double passage_length = 0;
  double pairwise_passage_similarity = 0;  // percent
  double ngram_overlap[4] = {0, 0, 0, 0};  // percent, n = 1..4
  double query_common_ratio = 0;           // percent
  double answer_common_ratio = 0;          // percent
  long long num_examples = 0;

  nlohmann::json to_json() const;
};

// Corpus descriptive statistics over whitespace-token text. Common-word
// ratios use word frequencies counted over the given examples' queries,
// passages and responses.
StatsReport corpus_statistics(const std::vector<DialogueExample>& examples,
                              long long common_threshold = 100000);

}  // namespace cse

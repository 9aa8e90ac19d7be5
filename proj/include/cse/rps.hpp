#pragma once

#include <string>
#include <vector>

#include "cse/coattention.hpp"

namespace cse {

struct RpsOutput {
  ag::Var probabilities;         // k x 1, sigmoid outputs in (0,1)
  std::vector<double> scores;    // extracted probabilities
  std::vector<int> ranking;      // passage indices by descending score, stable
  DualStates dual;               // this module's coattention states
};

// Relevant Passage Selection head: own coattention block, then an MLP over
// each passage's position-0 ([CLS]) row and a sigmoid.
class RpsHead {
 public:
  RpsHead(ParamStore& store, const std::string& prefix,
          const ModelConfig& config);

  RpsOutput forward(ag::Graph& g, const ag::Var& h_q,
                    const std::vector<ag::Var>& h_ds,
                    const std::vector<int>& query_mask,
                    const std::vector<std::vector<int>>& passage_masks,
                    std::mt19937_64* drop_rng = nullptr) const;

 private:
  CoattentionBlock coattention_;
  Param* w1_;
  Param* b1_;
  Param* w2_;
  Param* b2_;
};

// Stable descending ranking of scores (ties keep original order).
std::vector<int> ranking_from_scores(const std::vector<double>& scores);

// Binary cross entropy over passages, mean-reduced within the example.
// Probabilities are clamped to [eps, 1-eps], eps = 1e-7.
ag::Var rps_loss(ag::Graph& g, const ag::Var& probabilities,
                 const std::vector<int>& labels);

}  // namespace cse

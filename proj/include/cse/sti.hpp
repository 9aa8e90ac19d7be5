#pragma once

#include <string>
#include <vector>

#include "cse/coattention.hpp"
#include "cse/corpus.hpp"

namespace cse {

struct StiOutput {
  // Raw per-token sigmoid probabilities (len_k x 1 per passage) — the loss
  // reads these at content positions.
  std::vector<ag::Var> probabilities;
  // Same probabilities with pad/special positions forced to exactly 0 — the
  // decoder's support priors.
  std::vector<ag::Var> support_priors;
  DualStates dual;  // token states h_{d_i<-Q}, kept for the decoder
};

// Supporting Token Identification head: own coattention block, per-token MLP
// and sigmoid.
class StiHead {
 public:
  StiHead(ParamStore& store, const std::string& prefix,
          const ModelConfig& config);

  // content_masks: 1 at real content tokens (non-pad, non-special), else 0.
  StiOutput forward(ag::Graph& g, const ag::Var& h_q,
                    const std::vector<ag::Var>& h_ds,
                    const std::vector<int>& query_mask,
                    const std::vector<std::vector<int>>& passage_masks,
                    const std::vector<std::vector<int>>& content_masks,
                    std::mt19937_64* drop_rng = nullptr) const;

 private:
  CoattentionBlock coattention_;
  Param* w1_;
  Param* b1_;
  Param* w2_;
  Param* b2_;
};

// Confidence-aware cross entropy: -[c*y*log p + (1-y)*log(1-p)] summed over
// content tokens of all passages, mean-reduced over those tokens. Clamping as
// in rps_loss. Lengths must align with the labels.
ag::Var sti_loss(ag::Graph& g, const std::vector<ag::Var>& probabilities,
                 const WeakSupportLabels& weak,
                 const std::vector<std::vector<int>>& content_masks);

}  // namespace cse

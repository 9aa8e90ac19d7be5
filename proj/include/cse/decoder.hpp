#pragma once

#include <string>
#include <vector>

#include "cse/coattention.hpp"
#include "cse/corpus.hpp"

namespace cse {

// Everything the copy modes need about the candidate set: raw passage priors
// (k x 1), per-token support priors (len_k x 1, exactly 0 at pad/special
// positions) and the token states they weight.
struct PriorBundle {
  ag::Var passage_priors;
  std::vector<ag::Var> support_priors;
  std::vector<ag::Var> token_states;
};

// h(a^t) = sum_k P(d^k|Q) sum_i P(d^k_i|d^k,Q) h_{d^k_i<-Q}, a 1 x N row.
ag::Var answer_representation(ag::Graph& g, const PriorBundle& priors);

struct DecodeResult {
  ag::Var final_dists;  // J x V; each row sums to 1
  ag::Var mode_probs;   // J x 3: P(g), P(c_Q), P(c_D)
  ag::Var gen_dist;     // J x V vocabulary softmax
  ag::Var copy_q_dist;  // J x V scatter of query-position attention
  ag::Var copy_d_dist;  // J x V prior-mixed passage copy distribution
};

// Prior-aware pointer generator: two stacked decoder passes (first over the
// query reading states, second over the passage reading states), three token
// modes, and softmax mode coordination.
class ResponseDecoder {
 public:
  ResponseDecoder(ParamStore& store, const std::string& prefix,
                  Param* token_embedding, const ModelConfig& config);

  // Teacher-forced pass over the whole prefix (row j conditions on tokens
  // 0..j via causal masking). `reading` supplies the cross-attention
  // memories; `priors` feeds mode c_D and h(a^t). With plain_pointer the
  // copy path ignores the priors: per-passage attention is scattered
  // unweighted and averaged uniformly over passages.
  DecodeResult forward(ag::Graph& g, const std::vector<int>& prefix_ids,
                       const EncodedExample& ex, const DualStates& reading,
                       const PriorBundle& priors, bool plain_pointer,
                       std::mt19937_64* drop_rng = nullptr) const;

 private:
  Param* token_embedding_;
  Param* positions_;
  DecoderLayers stack_q_;
  DecoderLayers stack_d_;
  // mode g: MLP([emb ; h^D ; h(a)]) -> vocabulary softmax
  Param* gen_w1_;
  Param* gen_b1_;
  Param* gen_w2_;
  Param* gen_b2_;
  // additive attention for the query pointer and the passage pointer
  Param* q_att_wq_;
  Param* q_att_wk_;
  Param* q_att_v_;
  Param* d_att_wq_;
  Param* d_att_wk_;
  Param* d_att_v_;
  Param* mode_w_;  // 3N x 3, no bias
  int hidden_;
  int vocab_size_;
  int max_len_;
};

// -mean_j log P(r_j), probabilities clamped at 1e-9. `targets` are the gold
// ids aligned with the distribution rows.
ag::Var rg_loss(ag::Graph& g, const ag::Var& step_dists,
                const std::vector<int>& targets);

}  // namespace cse

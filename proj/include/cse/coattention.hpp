#pragma once

#include <string>
#include <vector>

#include "cse/encoder.hpp"

namespace cse {

// v^T [h_q (+) h_d (+) h_q(.)h_d] for N-vectors; the scalar form of the
// interaction score, kept as a plain function so tests can enumerate it.
double cross_correlation(const Eigen::VectorXd& h_q, const Eigen::VectorXd& h_d,
                         const Eigen::VectorXd& v);

// Interaction matrix M[i][j] = cross_correlation(H_Q[i], H_d[j], v), computed
// with three block products instead of per-pair concatenations. v is 3N x 1.
ag::Var interaction_matrix(ag::Graph& g, const ag::Var& h_q, const ag::Var& h_d,
                           const ag::Var& v);

struct DualStates {
  ag::Var query;                    // H_{Q<-D}: |Q| x N
  std::vector<ag::Var> passages;    // H_{d<-Q}: |d_k| x N each
};

// The query-passage interaction block: interaction matrices, bidirectional
// softmax attention, two-hop max-pooled summaries, and 5N->N reduction with
// encoder layers. RPS and STI each own an instance (parameters unshared).
class CoattentionBlock {
 public:
  CoattentionBlock(ParamStore& store, const std::string& prefix,
                   const ModelConfig& config);

  // k >= 1 passages; masks mark non-pad positions.
  DualStates dual_attend(ag::Graph& g, const ag::Var& h_q,
                         const std::vector<ag::Var>& h_ds,
                         const std::vector<int>& query_mask,
                         const std::vector<std::vector<int>>& passage_masks,
                         std::mt19937_64* drop_rng = nullptr) const;

 private:
  Param* v_;           // 3N x 1 interaction weights
  Param* reduce_q_w_;  // 5N x N
  Param* reduce_q_b_;
  Param* reduce_d_w_;  // 5N x N
  Param* reduce_d_b_;
  EncoderLayers reduce_q_layers_;
  EncoderLayers reduce_d_layers_;
  int hidden_;
};

}  // namespace cse

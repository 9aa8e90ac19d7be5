#pragma once

#include <string>
#include <vector>

#include "cse/config.hpp"
#include "cse/graph.hpp"
#include "cse/params.hpp"

namespace cse {

// Attention masks as dense 0/1 matrices consumed by ag::softmax_rows.
Mat key_mask_matrix(Eigen::Index rows, const std::vector<int>& key_mask);
Mat causal_mask_matrix(const std::vector<int>& key_mask);

struct AttentionParams {
  Param* wq;
  Param* bq;
  Param* wk;
  Param* bk;
  Param* wv;
  Param* bv;
  Param* wo;
  Param* bo;
  int heads = 1;
};

AttentionParams make_attention(ParamStore& store, const std::string& prefix,
                               int hidden, int heads);

// Multi-head scaled dot-product attention; `mask` has one row per query
// position and one column per key position.
ag::Var multi_head_attention(ag::Graph& g, const ag::Var& queries,
                             const ag::Var& keys_values,
                             const AttentionParams& p, const Mat& mask);

struct LayerNormParams {
  Param* gain;
  Param* bias;
};

struct FeedForwardParams {
  Param* w1;
  Param* b1;
  Param* w2;
  Param* b2;
};

// One post-LN encoder block: self-attention + feed-forward.
struct EncoderLayerParams {
  AttentionParams attn;
  LayerNormParams ln1;
  FeedForwardParams ffn;
  LayerNormParams ln2;
};

// Self-attention-only stack used by the encoders and by the coattention
// dimension reducers.
class EncoderLayers {
 public:
  EncoderLayers(ParamStore& store, const std::string& prefix, int layers,
                int hidden, int heads, int ffn, double dropout = 0.0);
  // drop_rng non-null enables training-mode dropout at the sublayer outputs.
  ag::Var forward(ag::Graph& g, ag::Var x, const std::vector<int>& mask,
                  std::mt19937_64* drop_rng = nullptr) const;

 private:
  std::vector<EncoderLayerParams> layers_;
  double dropout_;
};

// Token + learned-position embeddings followed by encoder blocks. The token
// embedding table is shared across the model and passed in at construction.
class TransformerEncoder {
 public:
  TransformerEncoder(ParamStore& store, const std::string& prefix,
                     Param* token_embedding, int max_len,
                     const ModelConfig& config);

  // ids/mask must have equal length <= max_len; over-length input throws.
  ag::Var forward(ag::Graph& g, const std::vector<int>& ids,
                  const std::vector<int>& mask,
                  std::mt19937_64* drop_rng = nullptr) const;

 private:
  Param* token_embedding_;
  Param* positions_;
  int max_len_;
  EncoderLayers layers_;
};

// One post-LN decoder block: causal self-attention, cross-attention over a
// memory, feed-forward.
struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  AttentionParams cross_attn;
  LayerNormParams ln2;
  FeedForwardParams ffn;
  LayerNormParams ln3;
};

class DecoderLayers {
 public:
  DecoderLayers(ParamStore& store, const std::string& prefix, int layers,
                int hidden, int heads, int ffn, double dropout = 0.0);
  // x: (prefix length x N), self-attended causally; memory: (length x N).
  ag::Var forward(ag::Graph& g, ag::Var x, const std::vector<int>& self_mask,
                  ag::Var memory, const std::vector<int>& memory_mask,
                  std::mt19937_64* drop_rng = nullptr) const;

 private:
  std::vector<DecoderLayerParams> layers_;
  double dropout_;
};

}  // namespace cse

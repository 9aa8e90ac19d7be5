#include "cse/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cse {

namespace {

std::string layer_prefix(const std::string& prefix, int i) {
  return prefix + ".l" + std::to_string(i);
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix,
                                int hidden) {
  return {&store.ones(prefix + ".g", 1, hidden),
          &store.zeros(prefix + ".b", 1, hidden)};
}

FeedForwardParams make_ffn(ParamStore& store, const std::string& prefix,
                           int hidden, int ffn) {
  return {&store.glorot(prefix + ".w1", hidden, ffn),
          &store.zeros(prefix + ".b1", 1, ffn),
          &store.glorot(prefix + ".w2", ffn, hidden),
          &store.zeros(prefix + ".b2", 1, hidden)};
}

ag::Var ffn_forward(ag::Graph& g, const ag::Var& x,
                    const FeedForwardParams& p) {
  ag::Var h = ag::gelu(ag::add_rowvec(ag::matmul(x, g.param(*p.w1)),
                                      g.param(*p.b1)));
  return ag::add_rowvec(ag::matmul(h, g.param(*p.w2)), g.param(*p.b2));
}

ag::Var residual_norm(ag::Graph& g, const ag::Var& x, const ag::Var& sub,
                      const LayerNormParams& ln, double dropout,
                      std::mt19937_64* drop_rng) {
  ag::Var d = ag::dropout(sub, dropout, drop_rng);
  return ag::layer_norm(ag::add(x, d), g.param(*ln.gain), g.param(*ln.bias));
}

}  // namespace

Mat key_mask_matrix(Eigen::Index rows, const std::vector<int>& key_mask) {
  Mat m = Mat::Zero(rows, static_cast<Eigen::Index>(key_mask.size()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (key_mask[static_cast<std::size_t>(c)] != 0) m.col(c).setOnes();
  }
  return m;
}

Mat causal_mask_matrix(const std::vector<int>& key_mask) {
  const auto n = static_cast<Eigen::Index>(key_mask.size());
  Mat m = Mat::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) {
      if (key_mask[static_cast<std::size_t>(c)] != 0) m(r, c) = 1.0;
    }
  }
  return m;
}

AttentionParams make_attention(ParamStore& store, const std::string& prefix,
                               int hidden, int heads) {
  if (heads < 1 || hidden % heads != 0) {
    throw std::invalid_argument("attention: hidden not divisible by heads");
  }
  AttentionParams p;
  p.wq = &store.glorot(prefix + ".wq", hidden, hidden);
  p.bq = &store.zeros(prefix + ".bq", 1, hidden);
  p.wk = &store.glorot(prefix + ".wk", hidden, hidden);
  p.bk = &store.zeros(prefix + ".bk", 1, hidden);
  p.wv = &store.glorot(prefix + ".wv", hidden, hidden);
  p.bv = &store.zeros(prefix + ".bv", 1, hidden);
  p.wo = &store.glorot(prefix + ".wo", hidden, hidden);
  p.bo = &store.zeros(prefix + ".bo", 1, hidden);
  p.heads = heads;
  return p;
}

ag::Var multi_head_attention(ag::Graph& g, const ag::Var& queries,
                             const ag::Var& keys_values,
                             const AttentionParams& p, const Mat& mask) {
  if (mask.rows() != queries.rows() || mask.cols() != keys_values.rows()) {
    throw std::invalid_argument("attention: mask shape mismatch");
  }
  const Eigen::Index hidden = p.wq->value.cols();
  const Eigen::Index dh = hidden / p.heads;

  ag::Var q = ag::add_rowvec(ag::matmul(queries, g.param(*p.wq)),
                             g.param(*p.bq));
  ag::Var k = ag::add_rowvec(ag::matmul(keys_values, g.param(*p.wk)),
                             g.param(*p.bk));
  ag::Var v = ag::add_rowvec(ag::matmul(keys_values, g.param(*p.wv)),
                             g.param(*p.bv));

  std::vector<ag::Var> contexts;
  contexts.reserve(static_cast<std::size_t>(p.heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < p.heads; ++h) {
    ag::Var qh = ag::slice_cols(q, h * dh, dh);
    ag::Var kh = ag::slice_cols(k, h * dh, dh);
    ag::Var vh = ag::slice_cols(v, h * dh, dh);
    ag::Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt);
    ag::Var attn = ag::softmax_rows(scores, &mask);
    contexts.push_back(ag::matmul(attn, vh));
  }
  ag::Var ctx = p.heads == 1 ? contexts.front() : ag::concat_cols(contexts);
  return ag::add_rowvec(ag::matmul(ctx, g.param(*p.wo)), g.param(*p.bo));
}

EncoderLayers::EncoderLayers(ParamStore& store, const std::string& prefix,
                             int layers, int hidden, int heads, int ffn,
                             double dropout)
    : dropout_(dropout) {
  layers_.reserve(static_cast<std::size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    const std::string lp = layer_prefix(prefix, i);
    EncoderLayerParams layer;
    layer.attn = make_attention(store, lp + ".attn", hidden, heads);
    layer.ln1 = make_layer_norm(store, lp + ".ln1", hidden);
    layer.ffn = make_ffn(store, lp + ".ffn", hidden, ffn);
    layer.ln2 = make_layer_norm(store, lp + ".ln2", hidden);
    layers_.push_back(layer);
  }
}

ag::Var EncoderLayers::forward(ag::Graph& g, ag::Var x,
                               const std::vector<int>& mask,
                               std::mt19937_64* drop_rng) const {
  if (static_cast<Eigen::Index>(mask.size()) != x.rows()) {
    throw std::invalid_argument("encoder: mask length mismatch");
  }
  const Mat m = key_mask_matrix(x.rows(), mask);
  for (const auto& layer : layers_) {
    ag::Var a = multi_head_attention(g, x, x, layer.attn, m);
    x = residual_norm(g, x, a, layer.ln1, dropout_, drop_rng);
    ag::Var f = ffn_forward(g, x, layer.ffn);
    x = residual_norm(g, x, f, layer.ln2, dropout_, drop_rng);
  }
  return x;
}

TransformerEncoder::TransformerEncoder(ParamStore& store,
                                       const std::string& prefix,
                                       Param* token_embedding, int max_len,
                                       const ModelConfig& config)
    : token_embedding_(token_embedding),
      positions_(&store.normal(prefix + ".pos", max_len, config.hidden, 0.02)),
      max_len_(max_len),
      layers_(store, prefix, config.layers, config.hidden, config.heads,
              config.ffn_size(), config.dropout) {}

ag::Var TransformerEncoder::forward(ag::Graph& g, const std::vector<int>& ids,
                                    const std::vector<int>& mask,
                                    std::mt19937_64* drop_rng) const {
  if (ids.empty() || ids.size() != mask.size()) {
    throw std::invalid_argument("encoder: ids/mask length mismatch");
  }
  if (static_cast<int>(ids.size()) > max_len_) {
    throw std::invalid_argument("encoder: sequence longer than max length");
  }
  const auto len = static_cast<Eigen::Index>(ids.size());
  ag::Var emb = ag::gather_rows(g.param(*token_embedding_), ids);
  ag::Var pos = ag::slice_rows(g.param(*positions_), 0, len);
  return layers_.forward(g, ag::add(emb, pos), mask, drop_rng);
}

DecoderLayers::DecoderLayers(ParamStore& store, const std::string& prefix,
                             int layers, int hidden, int heads, int ffn,
                             double dropout)
    : dropout_(dropout) {
  layers_.reserve(static_cast<std::size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    const std::string lp = layer_prefix(prefix, i);
    DecoderLayerParams layer;
    layer.self_attn = make_attention(store, lp + ".self", hidden, heads);
    layer.ln1 = make_layer_norm(store, lp + ".ln1", hidden);
    layer.cross_attn = make_attention(store, lp + ".cross", hidden, heads);
    layer.ln2 = make_layer_norm(store, lp + ".ln2", hidden);
    layer.ffn = make_ffn(store, lp + ".ffn", hidden, ffn);
    layer.ln3 = make_layer_norm(store, lp + ".ln3", hidden);
    layers_.push_back(layer);
  }
}

ag::Var DecoderLayers::forward(ag::Graph& g, ag::Var x,
                               const std::vector<int>& self_mask,
                               ag::Var memory,
                               const std::vector<int>& memory_mask,
                               std::mt19937_64* drop_rng) const {
  if (static_cast<Eigen::Index>(self_mask.size()) != x.rows()) {
    throw std::invalid_argument("decoder: self mask length mismatch");
  }
  if (static_cast<Eigen::Index>(memory_mask.size()) != memory.rows()) {
    throw std::invalid_argument("decoder: memory mask length mismatch");
  }
  const Mat self_m = causal_mask_matrix(self_mask);
  const Mat cross_m = key_mask_matrix(x.rows(), memory_mask);
  for (const auto& layer : layers_) {
    ag::Var a = multi_head_attention(g, x, x, layer.self_attn, self_m);
    x = residual_norm(g, x, a, layer.ln1, dropout_, drop_rng);
    ag::Var c = multi_head_attention(g, x, memory, layer.cross_attn, cross_m);
    x = residual_norm(g, x, c, layer.ln2, dropout_, drop_rng);
    ag::Var f = ffn_forward(g, x, layer.ffn);
    x = residual_norm(g, x, f, layer.ln3, dropout_, drop_rng);
  }
  return x;
}

}  // namespace cse

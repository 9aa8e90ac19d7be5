#include "cse/decoder.hpp"

#include <array>
#include <stdexcept>

namespace cse {

namespace {

// Column vector (J x 1) broadcast across `width` columns.
ag::Var broadcast_cols(ag::Graph& g, const ag::Var& col, Eigen::Index width) {
  return ag::matmul(col, g.input(Mat::Ones(1, width)));
}

Mat row_of(const std::vector<double>& xs) {
  Mat m(1, static_cast<Eigen::Index>(xs.size()));
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    m(0, i) = xs[static_cast<std::size_t>(i)];
  }
  return m;
}

}  // namespace

ag::Var answer_representation(ag::Graph& g, const PriorBundle& priors) {
  const std::size_t k = priors.support_priors.size();
  if (k == 0 || priors.token_states.size() != k ||
      priors.passage_priors.rows() != static_cast<Eigen::Index>(k) ||
      priors.passage_priors.cols() != 1) {
    throw std::invalid_argument("answer_representation: prior shape mismatch");
  }
  ag::Var total;
  for (std::size_t i = 0; i < k; ++i) {
    if (priors.support_priors[i].rows() != priors.token_states[i].rows()) {
      throw std::invalid_argument("answer_representation: length mismatch");
    }
    ag::Var pooled = ag::matmul(ag::transpose(priors.support_priors[i]),
                                priors.token_states[i]);  // 1 x N
    ag::Var pk = ag::slice_rows(priors.passage_priors,
                                static_cast<Eigen::Index>(i), 1);
    ag::Var weighted = ag::mul_scalar(pooled, pk);
    total = total.valid() ? ag::add(total, weighted) : weighted;
  }
  return total;
}

ResponseDecoder::ResponseDecoder(ParamStore& store, const std::string& prefix,
                                 Param* token_embedding,
                                 const ModelConfig& config)
    : token_embedding_(token_embedding),
      positions_(&store.normal(prefix + ".pos", config.max_response_len,
                               config.hidden, 0.02)),
      stack_q_(store, prefix + ".sq", config.layers, config.hidden,
               config.heads, config.ffn_size(), config.dropout),
      stack_d_(store, prefix + ".sd", config.layers, config.hidden,
               config.heads, config.ffn_size(), config.dropout),
      gen_w1_(&store.glorot(prefix + ".gen.w1", 3 * config.hidden,
                            config.hidden)),
      gen_b1_(&store.zeros(prefix + ".gen.b1", 1, config.hidden)),
      gen_w2_(&store.glorot(prefix + ".gen.w2", config.hidden,
                            config.vocab_size)),
      gen_b2_(&store.zeros(prefix + ".gen.b2", 1, config.vocab_size)),
      q_att_wq_(&store.glorot(prefix + ".qatt.wq", config.hidden,
                              config.hidden)),
      q_att_wk_(&store.glorot(prefix + ".qatt.wk", config.hidden,
                              config.hidden)),
      q_att_v_(&store.glorot(prefix + ".qatt.v", config.hidden, 1)),
      d_att_wq_(&store.glorot(prefix + ".datt.wq", config.hidden,
                              config.hidden)),
      d_att_wk_(&store.glorot(prefix + ".datt.wk", config.hidden,
                              config.hidden)),
      d_att_v_(&store.glorot(prefix + ".datt.v", config.hidden, 1)),
      mode_w_(&store.glorot(prefix + ".mode.w", 3 * config.hidden, 3)),
      hidden_(config.hidden),
      vocab_size_(config.vocab_size),
      max_len_(config.max_response_len) {}

DecodeResult ResponseDecoder::forward(ag::Graph& g,
                                      const std::vector<int>& prefix_ids,
                                      const EncodedExample& ex,
                                      const DualStates& reading,
                                      const PriorBundle& priors,
                                      bool plain_pointer,
                                      std::mt19937_64* drop_rng) const {
  const auto j = static_cast<Eigen::Index>(prefix_ids.size());
  if (j < 1 || j > max_len_) {
    throw std::invalid_argument("decoder: prefix length out of range");
  }
  for (int id : prefix_ids) {
    if (id < 0 || id >= vocab_size_) {
      throw std::invalid_argument("decoder: token id out of range");
    }
  }
  const std::size_t k = reading.passages.size();
  if (k == 0 || ex.passage_ids.size() != k) {
    throw std::invalid_argument("decoder: passage state/id count mismatch");
  }

  // Two stacked passes: response states first informed by the query reading,
  // then by the concatenated passage readings.
  ag::Var emb = ag::gather_rows(g.param(*token_embedding_), prefix_ids);
  ag::Var x = ag::add(emb, ag::slice_rows(g.param(*positions_), 0, j));
  const std::vector<int> self_mask(static_cast<std::size_t>(j), 1);
  ag::Var h_rq = stack_q_.forward(g, x, self_mask, reading.query,
                                  ex.query_mask, drop_rng);

  std::vector<int> memory_mask;
  for (const auto& m : ex.passage_masks) {
    memory_mask.insert(memory_mask.end(), m.begin(), m.end());
  }
  ag::Var memory = k == 1 ? reading.passages.front()
                          : ag::concat_rows(reading.passages);
  ag::Var h_rd = stack_d_.forward(g, h_rq, self_mask, memory, memory_mask,
                                  drop_rng);

  DecodeResult out;

  // Generation mode: MLP over [token embedding ; passage-aware state ; h(a)].
  ag::Var h_answer;
  if (plain_pointer) {
    // Uniform stand-in: mean content state per passage, averaged over
    // passages.
    for (std::size_t i = 0; i < k; ++i) {
      const auto content = content_mask_of(ex.passage_ids[i]);
      double count = 0.0;
      for (int m : content) count += m;
      if (count <= 0.0) {
        throw std::invalid_argument("decoder: passage without content tokens");
      }
      std::vector<double> w(content.size());
      for (std::size_t t = 0; t < content.size(); ++t) {
        w[t] = content[t] / count / static_cast<double>(k);
      }
      ag::Var pooled =
          ag::matmul(g.input(row_of(w)), reading.passages[i]);  // 1 x N
      h_answer = h_answer.valid() ? ag::add(h_answer, pooled) : pooled;
    }
  } else {
    h_answer = answer_representation(g, priors);
  }
  ag::Var gen_in =
      ag::concat_cols({emb, h_rd, ag::repeat_rows(h_answer, j)});
  ag::Var gen_h = ag::tanh_v(
      ag::add_rowvec(ag::matmul(gen_in, g.param(*gen_w1_)), g.param(*gen_b1_)));
  out.gen_dist = ag::softmax_rows(
      ag::add_rowvec(ag::matmul(gen_h, g.param(*gen_w2_)), g.param(*gen_b2_)));

  // Query pointer: additive attention over content positions of the query.
  const Mat q_content =
      key_mask_matrix(j, content_mask_of(ex.query_ids));
  ag::Var q_scores = ag::additive_scores(
      ag::matmul(h_rq, g.param(*q_att_wq_)),
      ag::matmul(reading.query, g.param(*q_att_wk_)), g.param(*q_att_v_));
  ag::Var p_cq = ag::softmax_rows(q_scores, &q_content);
  out.copy_q_dist = ag::scatter_sum_cols(p_cq, ex.query_ids, vocab_size_);
  ag::Var h_att_q = ag::matmul(p_cq, reading.query);

  // Passage pointer. The prior path re-weights each passage's attention by
  // the per-token support priors (renormalized) and mixes passages by the
  // renormalized passage priors; the plain path scatters raw attention and
  // averages passages uniformly.
  ag::Var renorm_priors;
  if (!plain_pointer) {
    if (priors.passage_priors.rows() != static_cast<Eigen::Index>(k)) {
      throw std::invalid_argument("decoder: prior count mismatch");
    }
    renorm_priors =
        ag::normalize_rows(ag::transpose(priors.passage_priors));  // 1 x k
  }
  ag::Var copy_d;
  ag::Var h_att_d;
  ag::Var d_queries = ag::matmul(h_rd, g.param(*d_att_wq_));
  for (std::size_t i = 0; i < k; ++i) {
    const Mat d_content = key_mask_matrix(j, content_mask_of(ex.passage_ids[i]));
    ag::Var scores = ag::additive_scores(
        d_queries, ag::matmul(reading.passages[i], g.param(*d_att_wk_)),
        g.param(*d_att_v_));
    ag::Var attn = ag::softmax_rows(scores, &d_content);

    ag::Var position_dist;
    ag::Var weight;  // 1 x 1 passage weight
    if (plain_pointer) {
      position_dist = attn;
      weight = g.input(Mat::Constant(1, 1, 1.0 / static_cast<double>(k)));
    } else {
      ag::Var prior_row =
          ag::repeat_rows(ag::transpose(priors.support_priors[i]), j);
      position_dist = ag::normalize_rows(ag::mul(attn, prior_row));
      weight = ag::slice_cols(renorm_priors, static_cast<Eigen::Index>(i), 1);
    }
    ag::Var scattered = ag::mul_scalar(
        ag::scatter_sum_cols(position_dist, ex.passage_ids[i], vocab_size_),
        weight);
    ag::Var pooled = ag::mul_scalar(
        ag::matmul(position_dist, reading.passages[i]), weight);
    copy_d = copy_d.valid() ? ag::add(copy_d, scattered) : scattered;
    h_att_d = h_att_d.valid() ? ag::add(h_att_d, pooled) : pooled;
  }
  out.copy_d_dist = copy_d;

  // Mode coordination over [state ; attended query ; attended passages].
  ag::Var mode_in = ag::concat_cols({h_rd, h_att_q, h_att_d});
  out.mode_probs = ag::softmax_rows(ag::matmul(mode_in, g.param(*mode_w_)));

  ag::Var mixed;
  const std::array<const ag::Var*, 3> dists = {&out.gen_dist, &out.copy_q_dist,
                                               &out.copy_d_dist};
  for (int m = 0; m < 3; ++m) {
    ag::Var weight = broadcast_cols(g, ag::slice_cols(out.mode_probs, m, 1),
                                    vocab_size_);
    ag::Var term = ag::mul(weight, *dists[static_cast<std::size_t>(m)]);
    mixed = mixed.valid() ? ag::add(mixed, term) : term;
  }
  out.final_dists = mixed;
  return out;
}

ag::Var rg_loss(ag::Graph& g, const ag::Var& step_dists,
                const std::vector<int>& targets) {
  const auto j = static_cast<Eigen::Index>(targets.size());
  if (j == 0 || step_dists.rows() != j) {
    throw std::invalid_argument("rg_loss: target/step count mismatch");
  }
  std::vector<int> rows(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    rows[i] = static_cast<int>(i);
    if (targets[i] < 0 || targets[i] >= step_dists.cols()) {
      throw std::invalid_argument("rg_loss: target id out of range");
    }
  }
  ag::Var picked = ag::gather_entries(step_dists, rows, targets);
  return ag::scale(ag::mean_all(ag::log_clamped(picked, 1e-9)), -1.0);
}

}  // namespace cse

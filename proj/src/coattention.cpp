#include "cse/coattention.hpp"

#include <stdexcept>

namespace cse {

double cross_correlation(const Eigen::VectorXd& h_q, const Eigen::VectorXd& h_d,
                         const Eigen::VectorXd& v) {
  const Eigen::Index n = h_q.size();
  if (h_d.size() != n || v.size() != 3 * n) {
    throw std::invalid_argument("cross_correlation: size mismatch");
  }
  return v.segment(0, n).dot(h_q) + v.segment(n, n).dot(h_d) +
         v.segment(2 * n, n).dot(h_q.cwiseProduct(h_d));
}

ag::Var interaction_matrix(ag::Graph& g, const ag::Var& h_q, const ag::Var& h_d,
                           const ag::Var& v) {
  const Eigen::Index n = h_q.cols();
  if (h_d.cols() != n || v.rows() != 3 * n || v.cols() != 1) {
    throw std::invalid_argument("interaction_matrix: size mismatch");
  }
  ag::Var v1 = ag::slice_rows(v, 0, n);
  ag::Var v2 = ag::slice_rows(v, n, n);
  ag::Var v3 = ag::slice_rows(v, 2 * n, n);

  // score(i,j) = v1.h_q[i] + v2.h_d[j] + v3.(h_q[i] (.) h_d[j]); the three
  // terms factor into rank-1 broadcasts plus one weighted product.
  ag::Var a = ag::matmul(h_q, v1);  // |Q| x 1
  ag::Var b = ag::matmul(h_d, v2);  // |d| x 1
  ag::Var left = ag::matmul(a, g.input(Mat::Ones(1, h_d.rows())));
  ag::Var right = ag::matmul(g.input(Mat::Ones(h_q.rows(), 1)),
                             ag::transpose(b));
  ag::Var weighted =
      ag::mul(h_q, ag::repeat_rows(ag::transpose(v3), h_q.rows()));
  return ag::add(ag::add(left, right), ag::matmul(weighted, ag::transpose(h_d)));
}

CoattentionBlock::CoattentionBlock(ParamStore& store, const std::string& prefix,
                                   const ModelConfig& config)
    : v_(&store.glorot(prefix + ".v", 3 * config.hidden, 1)),
      reduce_q_w_(&store.glorot(prefix + ".rq.w", 5 * config.hidden,
                                config.hidden)),
      reduce_q_b_(&store.zeros(prefix + ".rq.b", 1, config.hidden)),
      reduce_d_w_(&store.glorot(prefix + ".rd.w", 5 * config.hidden,
                                config.hidden)),
      reduce_d_b_(&store.zeros(prefix + ".rd.b", 1, config.hidden)),
      reduce_q_layers_(store, prefix + ".rq", config.reduce_layers,
                       config.hidden, config.heads, config.ffn_size(),
                       config.dropout),
      reduce_d_layers_(store, prefix + ".rd", config.reduce_layers,
                       config.hidden, config.heads, config.ffn_size(),
                       config.dropout),
      hidden_(config.hidden) {}

DualStates CoattentionBlock::dual_attend(
    ag::Graph& g, const ag::Var& h_q, const std::vector<ag::Var>& h_ds,
    const std::vector<int>& query_mask,
    const std::vector<std::vector<int>>& passage_masks,
    std::mt19937_64* drop_rng) const {
  if (h_ds.empty()) {
    throw std::invalid_argument("dual_attend: needs at least one passage");
  }
  if (h_ds.size() != passage_masks.size()) {
    throw std::invalid_argument("dual_attend: passage mask count mismatch");
  }
  if (static_cast<Eigen::Index>(query_mask.size()) != h_q.rows()) {
    throw std::invalid_argument("dual_attend: query mask length mismatch");
  }
  const std::size_t k = h_ds.size();
  ag::Var v = g.param(*v_);

  std::vector<ag::Var> to_passage(k);  // softmax over passage positions
  std::vector<ag::Var> to_query(k);    // softmax over query positions
  std::vector<ag::Var> h1_d(k);
  std::vector<ag::Var> first_hop(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (static_cast<Eigen::Index>(passage_masks[i].size()) != h_ds[i].rows()) {
      throw std::invalid_argument("dual_attend: passage mask length mismatch");
    }
    ag::Var m = interaction_matrix(g, h_q, h_ds[i], v);
    const Mat pass_mask = key_mask_matrix(h_q.rows(), passage_masks[i]);
    const Mat query_key = key_mask_matrix(h_ds[i].rows(), query_mask);
    to_passage[i] = ag::softmax_rows(m, &pass_mask);
    to_query[i] = ag::softmax_rows(ag::transpose(m), &query_key);
    h1_d[i] = ag::matmul(to_query[i], h_q);
    first_hop[i] = ag::matmul(to_passage[i], h_ds[i]);
  }
  ag::Var h1_q = ag::maximum(first_hop);

  std::vector<ag::Var> second_hop(k);
  for (std::size_t i = 0; i < k; ++i) {
    second_hop[i] = ag::matmul(to_passage[i], h1_d[i]);
  }
  ag::Var h2_q = ag::maximum(second_hop);

  DualStates out;
  ag::Var q_cat = ag::concat_cols({h_q, h1_q, h2_q, ag::mul(h1_q, h_q),
                                   ag::mul(h2_q, h_q)});
  ag::Var q_red = ag::add_rowvec(ag::matmul(q_cat, g.param(*reduce_q_w_)),
                                 g.param(*reduce_q_b_));
  out.query = reduce_q_layers_.forward(g, q_red, query_mask, drop_rng);

  out.passages.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    ag::Var h2_d = ag::matmul(to_query[i], h1_q);
    ag::Var d_cat = ag::concat_cols({h_ds[i], h1_d[i], h2_d,
                                     ag::mul(h1_d[i], h_ds[i]),
                                     ag::mul(h2_d, h_ds[i])});
    ag::Var d_red = ag::add_rowvec(ag::matmul(d_cat, g.param(*reduce_d_w_)),
                                   g.param(*reduce_d_b_));
    out.passages[i] =
        reduce_d_layers_.forward(g, d_red, passage_masks[i], drop_rng);
  }
  return out;
}

}  // namespace cse

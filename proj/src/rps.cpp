#include "cse/rps.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cse {

namespace {
constexpr double kProbEps = 1e-7;
}

RpsHead::RpsHead(ParamStore& store, const std::string& prefix,
                 const ModelConfig& config)
    : coattention_(store, prefix + ".co", config),
      w1_(&store.glorot(prefix + ".w1", config.hidden, config.hidden)),
      b1_(&store.zeros(prefix + ".b1", 1, config.hidden)),
      w2_(&store.glorot(prefix + ".w2", config.hidden, 1)),
      b2_(&store.zeros(prefix + ".b2", 1, 1)) {}

RpsOutput RpsHead::forward(ag::Graph& g, const ag::Var& h_q,
                           const std::vector<ag::Var>& h_ds,
                           const std::vector<int>& query_mask,
                           const std::vector<std::vector<int>>& passage_masks,
                           std::mt19937_64* drop_rng) const {
  RpsOutput out;
  out.dual = coattention_.dual_attend(g, h_q, h_ds, query_mask, passage_masks,
                                      drop_rng);
  std::vector<ag::Var> logits;
  logits.reserve(out.dual.passages.size());
  for (const ag::Var& passage : out.dual.passages) {
    ag::Var cls = ag::slice_rows(passage, 0, 1);
    ag::Var h = ag::tanh_v(
        ag::add_rowvec(ag::matmul(cls, g.param(*w1_)), g.param(*b1_)));
    logits.push_back(
        ag::add_rowvec(ag::matmul(h, g.param(*w2_)), g.param(*b2_)));
  }
  out.probabilities = ag::sigmoid(logits.size() == 1
                                      ? logits.front()
                                      : ag::concat_rows(logits));
  out.scores.resize(static_cast<std::size_t>(out.probabilities.rows()));
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    out.scores[i] = out.probabilities.value()(static_cast<Eigen::Index>(i), 0);
  }
  out.ranking = ranking_from_scores(out.scores);
  return out;
}

std::vector<int> ranking_from_scores(const std::vector<double>& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] >
           scores[static_cast<std::size_t>(b)];
  });
  return order;
}

ag::Var rps_loss(ag::Graph& g, const ag::Var& probabilities,
                 const std::vector<int>& labels) {
  const auto k = static_cast<Eigen::Index>(labels.size());
  if (probabilities.rows() != k || probabilities.cols() != 1 || k == 0) {
    throw std::invalid_argument("rps_loss: label/probability mismatch");
  }
  Mat y(k, 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label != 0 && label != 1) {
      throw std::invalid_argument("rps_loss: labels must be 0/1");
    }
    y(i, 0) = label;
  }
  ag::Var yv = g.input(std::move(y));
  ag::Var pos = ag::mul(yv, ag::log_clamped(probabilities, kProbEps));
  ag::Var neg = ag::mul(ag::one_minus(yv),
                        ag::log_clamped(ag::one_minus(probabilities), kProbEps));
  return ag::scale(ag::mean_all(ag::add(pos, neg)), -1.0);
}

}  // namespace cse

#include "cse/sti.hpp"

#include <stdexcept>

namespace cse {

namespace {
constexpr double kProbEps = 1e-7;

Mat column(const std::vector<int>& xs) {
  Mat m(static_cast<Eigen::Index>(xs.size()), 1);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    m(i, 0) = xs[static_cast<std::size_t>(i)];
  }
  return m;
}

Mat column(const std::vector<double>& xs) {
  Mat m(static_cast<Eigen::Index>(xs.size()), 1);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    m(i, 0) = xs[static_cast<std::size_t>(i)];
  }
  return m;
}

}  // namespace

StiHead::StiHead(ParamStore& store, const std::string& prefix,
                 const ModelConfig& config)
    : coattention_(store, prefix + ".co", config),
      w1_(&store.glorot(prefix + ".w1", config.hidden, config.hidden)),
      b1_(&store.zeros(prefix + ".b1", 1, config.hidden)),
      w2_(&store.glorot(prefix + ".w2", config.hidden, 1)),
      b2_(&store.zeros(prefix + ".b2", 1, 1)) {}

StiOutput StiHead::forward(ag::Graph& g, const ag::Var& h_q,
                           const std::vector<ag::Var>& h_ds,
                           const std::vector<int>& query_mask,
                           const std::vector<std::vector<int>>& passage_masks,
                           const std::vector<std::vector<int>>& content_masks,
                           std::mt19937_64* drop_rng) const {
  if (content_masks.size() != h_ds.size()) {
    throw std::invalid_argument("sti: content mask count mismatch");
  }
  StiOutput out;
  out.dual = coattention_.dual_attend(g, h_q, h_ds, query_mask, passage_masks,
                                      drop_rng);
  const std::size_t k = out.dual.passages.size();
  out.probabilities.resize(k);
  out.support_priors.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const ag::Var& passage = out.dual.passages[i];
    if (static_cast<Eigen::Index>(content_masks[i].size()) != passage.rows()) {
      throw std::invalid_argument("sti: content mask length mismatch");
    }
    ag::Var h = ag::tanh_v(
        ag::add_rowvec(ag::matmul(passage, g.param(*w1_)), g.param(*b1_)));
    ag::Var logits =
        ag::add_rowvec(ag::matmul(h, g.param(*w2_)), g.param(*b2_));
    out.probabilities[i] = ag::sigmoid(logits);
    out.support_priors[i] =
        ag::mul(out.probabilities[i], g.input(column(content_masks[i])));
  }
  return out;
}

ag::Var sti_loss(ag::Graph& g, const std::vector<ag::Var>& probabilities,
                 const WeakSupportLabels& weak,
                 const std::vector<std::vector<int>>& content_masks) {
  const std::size_t k = probabilities.size();
  if (weak.y.size() != k || weak.c.size() != k || content_masks.size() != k ||
      k == 0) {
    throw std::invalid_argument("sti_loss: passage count mismatch");
  }
  ag::Var total;
  double content_count = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const ag::Var& p = probabilities[i];
    const auto len = p.rows();
    if (static_cast<Eigen::Index>(weak.y[i].size()) != len ||
        static_cast<Eigen::Index>(weak.c[i].size()) != len ||
        static_cast<Eigen::Index>(content_masks[i].size()) != len ||
        p.cols() != 1) {
      throw std::invalid_argument("sti_loss: label length mismatch");
    }
    for (int m : content_masks[i]) content_count += m != 0 ? 1.0 : 0.0;

    ag::Var y = g.input(column(weak.y[i]));
    ag::Var c = g.input(column(weak.c[i]));
    ag::Var mask = g.input(column(content_masks[i]));
    ag::Var pos = ag::mul(c, ag::mul(y, ag::log_clamped(p, kProbEps)));
    ag::Var neg = ag::mul(ag::one_minus(y),
                          ag::log_clamped(ag::one_minus(p), kProbEps));
    ag::Var term = ag::sum_all(ag::mul(ag::add(pos, neg), mask));
    total = total.valid() ? ag::add(total, term) : term;
  }
  if (content_count <= 0.0) {
    throw std::invalid_argument("sti_loss: no content tokens");
  }
  return ag::scale(total, -1.0 / content_count);
}

}  // namespace cse

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cse/coattention.hpp"
#include "test_util.hpp"

using cse::Mat;
namespace ag = cse::ag;

namespace {

cse::ModelConfig tiny_config() {
  cse::ModelConfig c;
  c.hidden = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 16;
  c.reduce_layers = 1;
  c.vocab_size = 24;
  return c;
}

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("cross correlation hand values") {
  Eigen::VectorXd v(3);
  v << 1.0, 1.0, 1.0;
  Eigen::VectorXd hq(1), hd(1);
  hq << 2.0;
  hd << 3.0;
  CHECK(cse::cross_correlation(hq, hd, v) == 11.0);

  Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  CHECK(cse::cross_correlation(hq, hd, zero) == 0.0);

  // Asymmetric in its arguments once the two linear blocks differ.
  Eigen::VectorXd v2(3);
  v2 << 1.0, 2.0, 0.0;
  Eigen::VectorXd a(1), b(1);
  a << 1.0;
  b << 2.0;
  CHECK(cse::cross_correlation(a, b, v2) == 5.0);
  CHECK(cse::cross_correlation(b, a, v2) == 4.0);

  Eigen::VectorXd bad(4);
  CHECK_THROWS_AS(cse::cross_correlation(hq, hd, bad), std::invalid_argument);
}

TEST_CASE("interaction matrix matches the scalar enumeration") {
  std::mt19937_64 rng(31);
  const Eigen::Index n = 8;
  const Mat hq = random_mat(4, n, rng);
  const Mat hd = random_mat(5, n, rng);
  const Mat v = random_mat(3 * n, 1, rng);

  ag::Graph g(false);
  const Mat m =
      cse::interaction_matrix(g, g.input(hq), g.input(hd), g.input(v)).value();
  CHECK(m.rows() == 4);
  CHECK(m.cols() == 5);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double naive = cse::cross_correlation(
          hq.row(i).transpose(), hd.row(j).transpose(), v.col(0));
      CHECK(std::abs(m(i, j) - naive) <= 1e-9);
    }
  }
}

TEST_CASE("interaction matrix gradients match finite differences") {
  const Eigen::Index n = 6;
  cse::ParamStore store(41);
  cse::Param& hq = store.normal("hq", 3, n, 0.7);
  cse::Param& hd = store.normal("hd", 4, n, 0.7);
  cse::Param& v = store.normal("v", 3 * n, 1, 0.7);

  auto loss = [&](bool with_grad) {
    ag::Graph g(with_grad);
    ag::Var m = cse::interaction_matrix(g, g.param(hq), g.param(hd),
                                        g.param(v));
    ag::Var l = ag::mean_all(ag::mul(m, m));
    if (with_grad) g.backward(l);
    return l.value()(0, 0);
  };
  std::mt19937_64 rng(43);
  const auto res = testutil::check_gradients(store, loss, rng, 12, 1e-5);
  INFO(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("dual attention shapes") {
  const auto config = tiny_config();
  cse::ParamStore store(51);
  cse::CoattentionBlock block(store, "co", config);
  std::mt19937_64 rng(52);

  ag::Graph g(false);
  ag::Var hq = g.input(random_mat(4, config.hidden, rng));
  std::vector<ag::Var> hds = {g.input(random_mat(5, config.hidden, rng)),
                              g.input(random_mat(3, config.hidden, rng))};
  const std::vector<int> qm = {1, 1, 1, 1};
  const std::vector<std::vector<int>> pm = {{1, 1, 1, 1, 1}, {1, 1, 1}};
  const auto dual = block.dual_attend(g, hq, hds, qm, pm);
  CHECK(dual.query.rows() == 4);
  CHECK(dual.query.cols() == config.hidden);
  REQUIRE(dual.passages.size() == 2);
  CHECK(dual.passages[0].rows() == 5);
  CHECK(dual.passages[1].rows() == 3);
  CHECK(dual.passages[1].cols() == config.hidden);

  CHECK_THROWS_AS(block.dual_attend(g, hq, {}, qm, {}), std::invalid_argument);
}

TEST_CASE("duplicated passage leaves the max-pooled query side unchanged") {
  const auto config = tiny_config();
  cse::ParamStore store(61);
  cse::CoattentionBlock block(store, "co", config);
  std::mt19937_64 rng(62);

  const Mat hq = random_mat(4, config.hidden, rng);
  const Mat hd = random_mat(5, config.hidden, rng);
  const std::vector<int> qm = {1, 1, 1, 1};
  const std::vector<int> dm = {1, 1, 1, 1, 1};

  ag::Graph g1(false), g2(false);
  const auto once =
      block.dual_attend(g1, g1.input(hq), {g1.input(hd)}, qm, {dm});
  const auto twice = block.dual_attend(
      g2, g2.input(hq), {g2.input(hd), g2.input(hd)}, qm, {dm, dm});
  CHECK((once.query.value() - twice.query.value()).cwiseAbs().maxCoeff() <=
        1e-12);
  CHECK((twice.passages[0].value() - twice.passages[1].value())
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
  CHECK((once.passages[0].value() - twice.passages[0].value())
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("padding a passage does not disturb real positions") {
  const auto config = tiny_config();
  cse::ParamStore store(71);
  cse::CoattentionBlock block(store, "co", config);
  std::mt19937_64 rng(72);

  const Mat hq = random_mat(4, config.hidden, rng);
  const Mat hd = random_mat(5, config.hidden, rng);
  Mat padded(7, config.hidden);
  padded.topRows(5) = hd;
  padded.bottomRows(2) = random_mat(2, config.hidden, rng);  // garbage rows

  const std::vector<int> qm = {1, 1, 1, 1};
  ag::Graph g1(false), g2(false);
  const auto plain =
      block.dual_attend(g1, g1.input(hq), {g1.input(hd)}, qm, {{1, 1, 1, 1, 1}});
  const auto wide = block.dual_attend(g2, g2.input(hq), {g2.input(padded)}, qm,
                                      {{1, 1, 1, 1, 1, 0, 0}});
  CHECK((plain.query.value() - wide.query.value()).cwiseAbs().maxCoeff() <=
        1e-12);
  CHECK((wide.passages[0].value().topRows(5) - plain.passages[0].value())
            .cwiseAbs()
            .maxCoeff() <= 1e-12);
}

TEST_CASE("dual attention gradients match finite differences") {
  const auto config = tiny_config();
  cse::ParamStore store(81);
  cse::Param& hq = store.normal("hq", 4, config.hidden, 0.6);
  cse::Param& hd0 = store.normal("hd0", 5, config.hidden, 0.6);
  cse::Param& hd1 = store.normal("hd1", 3, config.hidden, 0.6);
  cse::CoattentionBlock block(store, "co", config);

  const std::vector<int> qm = {1, 1, 1, 1};
  const std::vector<std::vector<int>> pm = {{1, 1, 1, 1, 0}, {1, 1, 1}};
  auto loss = [&](bool with_grad) {
    ag::Graph g(with_grad);
    const auto dual = block.dual_attend(
        g, g.param(hq), {g.param(hd0), g.param(hd1)}, qm, pm);
    ag::Var l = ag::mean_all(ag::mul(dual.query, dual.query));
    for (const auto& p : dual.passages) {
      l = ag::add(l, ag::mean_all(ag::mul(p, p)));
    }
    if (with_grad) g.backward(l);
    return l.value()(0, 0);
  };
  std::mt19937_64 rng(83);
  const auto res = testutil::check_gradients(store, loss, rng, 5, 1e-5);
  INFO(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

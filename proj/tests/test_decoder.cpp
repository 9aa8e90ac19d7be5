#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cse/decoder.hpp"
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
  c.vocab_size = 20;
  c.max_query_len = 8;
  c.max_passage_len = 8;
  c.max_response_len = 8;
  return c;
}

cse::EncodedExample two_passage_example() {
  cse::EncodedExample ex;
  ex.conversation_id = "t";
  ex.query_ids = {2, 7, 8, 9};
  ex.query_mask = {1, 1, 1, 1};
  ex.passage_names = {"p0", "p1"};
  ex.passage_ids = {{2, 10, 11, 12}, {2, 13, 14}};
  ex.passage_masks = {{1, 1, 1, 1}, {1, 1, 1}};
  ex.relevance = {1, 0};
  ex.response_ids = {4, 10, 11, 5};
  return ex;
}

Mat uniform_support(const std::vector<int>& ids) {
  const auto content = cse::content_mask_of(ids);
  double count = 0.0;
  for (int m : content) count += m;
  Mat col = Mat::Zero(static_cast<Eigen::Index>(ids.size()), 1);
  for (Eigen::Index i = 0; i < col.rows(); ++i) {
    if (content[static_cast<std::size_t>(i)] != 0) col(i, 0) = 1.0 / count;
  }
  return col;
}

// Reading states and sigmoid-squashed priors, all backed by store params so
// gradient checks cover them.
struct Fixture {
  cse::ModelConfig config = tiny_config();
  cse::ParamStore store;
  cse::Param* emb;
  cse::Param* q;
  cse::Param* d0;
  cse::Param* d1;
  cse::Param* prior_logits;
  cse::Param* support_logits0;
  cse::Param* support_logits1;
  cse::ResponseDecoder dec;
  cse::EncodedExample ex = two_passage_example();

  explicit Fixture(unsigned long long seed)
      : store(seed),
        emb(&store.normal("tok", config.vocab_size, config.hidden, 0.5)),
        q(&store.normal("q", 4, config.hidden, 0.6)),
        d0(&store.normal("d0", 4, config.hidden, 0.6)),
        d1(&store.normal("d1", 3, config.hidden, 0.6)),
        prior_logits(&store.normal("pl", 2, 1, 0.6)),
        support_logits0(&store.normal("sl0", 4, 1, 0.6)),
        support_logits1(&store.normal("sl1", 3, 1, 0.6)),
        dec(store, "dec", emb, config) {}

  cse::DualStates reading(ag::Graph& g) const {
    return {g.param(*q), {g.param(*d0), g.param(*d1)}};
  }

  cse::PriorBundle learned_priors(ag::Graph& g,
                                  const cse::DualStates& states) const {
    cse::PriorBundle pb;
    pb.passage_priors = ag::sigmoid(g.param(*prior_logits));
    pb.support_priors = {
        ag::mul(ag::sigmoid(g.param(*support_logits0)),
                g.input(Mat(uniform_support(ex.passage_ids[0]).unaryExpr(
                    [](double v) { return v > 0 ? 1.0 : 0.0; })))),
        ag::mul(ag::sigmoid(g.param(*support_logits1)),
                g.input(Mat(uniform_support(ex.passage_ids[1]).unaryExpr(
                    [](double v) { return v > 0 ? 1.0 : 0.0; }))))};
    pb.token_states = states.passages;
    return pb;
  }

  cse::PriorBundle uniform_priors(ag::Graph& g,
                                  const cse::DualStates& states) const {
    cse::PriorBundle pb;
    pb.passage_priors = g.input(Mat::Constant(2, 1, 0.5));
    pb.support_priors = {g.input(uniform_support(ex.passage_ids[0])),
                         g.input(uniform_support(ex.passage_ids[1]))};
    pb.token_states = states.passages;
    return pb;
  }
};

}  // namespace

TEST_CASE("mixture and mode distributions are proper") {
  Fixture f(201);
  ag::Graph g(false);
  const auto states = f.reading(g);
  const auto out = f.dec.forward(g, {4, 10, 11}, f.ex, states,
                                 f.learned_priors(g, states), false);
  CHECK(out.final_dists.rows() == 3);
  CHECK(out.final_dists.cols() == f.config.vocab_size);
  CHECK(out.mode_probs.rows() == 3);
  CHECK(out.mode_probs.cols() == 3);
  for (Eigen::Index r = 0; r < 3; ++r) {
    CHECK(out.final_dists.value().row(r).sum() ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.mode_probs.value().row(r).sum() ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.gen_dist.value().row(r).sum() ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.copy_q_dist.value().row(r).sum() ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.copy_d_dist.value().row(r).sum() ==
          doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.final_dists.value().row(r).minCoeff() >= 0.0);
  }
}

TEST_CASE("copy distributions assign exact zero outside their sources") {
  Fixture f(211);
  ag::Graph g(false);
  const auto states = f.reading(g);
  const auto out = f.dec.forward(g, {4, 10, 11}, f.ex, states,
                                 f.learned_priors(g, states), false);
  for (Eigen::Index r = 0; r < 3; ++r) {
    // Query tokens are {7,8,9}; everything else gets exact zero, including
    // the [CLS] position that is masked out of the pointer softmax.
    CHECK(out.copy_q_dist.value()(r, 2) == 0.0);
    CHECK(out.copy_q_dist.value()(r, 13) == 0.0);
    CHECK(out.copy_q_dist.value()(r, 19) == 0.0);
    CHECK(out.copy_q_dist.value()(r, 7) > 0.0);
    // Passage tokens are {10,11,12} and {13,14}.
    CHECK(out.copy_d_dist.value()(r, 2) == 0.0);
    CHECK(out.copy_d_dist.value()(r, 9) == 0.0);
    CHECK(out.copy_d_dist.value()(r, 19) == 0.0);
    CHECK(out.copy_d_dist.value()(r, 10) > 0.0);
    CHECK(out.copy_d_dist.value()(r, 13) > 0.0);
    // The generator can emit anything.
    CHECK(out.gen_dist.value().row(r).minCoeff() > 0.0);
  }
}

TEST_CASE("future prefix tokens do not affect earlier steps") {
  Fixture f(221);
  auto run = [&](const std::vector<int>& prefix) {
    ag::Graph g(false);
    const auto states = f.reading(g);
    return f.dec
        .forward(g, prefix, f.ex, states, f.learned_priors(g, states), false)
        .final_dists.value();
  };
  const Mat a = run({4, 10, 11});
  const Mat b = run({4, 10, 14});
  CHECK((a.topRows(2) - b.topRows(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.row(2) - b.row(2)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("passage priors steer the copy mixture") {
  Fixture f(231);
  auto mass_on_second_passage = [&](double p0, double p1) {
    ag::Graph g(false);
    const auto states = f.reading(g);
    cse::PriorBundle pb;
    Mat priors(2, 1);
    priors << p0, p1;
    pb.passage_priors = g.input(priors);
    pb.support_priors = {g.input(uniform_support(f.ex.passage_ids[0])),
                         g.input(uniform_support(f.ex.passage_ids[1]))};
    pb.token_states = states.passages;
    const auto out = f.dec.forward(g, {4, 10, 11}, f.ex, states, pb, false);
    double mass = 0.0;
    for (Eigen::Index r = 0; r < out.copy_d_dist.rows(); ++r) {
      mass += out.copy_d_dist.value()(r, 13) + out.copy_d_dist.value()(r, 14);
    }
    return mass;
  };
  const double low = mass_on_second_passage(0.9, 0.1);
  const double high = mass_on_second_passage(0.1, 0.9);
  CHECK(high > low);
  // Renormalized weights are 0.1/0.9 exactly, so the ratio is 9.
  CHECK(high / low == doctest::Approx(9.0).epsilon(1e-9));
}

TEST_CASE("plain pointer agrees with the prior path under uniform priors") {
  Fixture f(241);
  ag::Graph g(false);
  const auto states = f.reading(g);
  const auto uniform = f.uniform_priors(g, states);
  const auto with_priors =
      f.dec.forward(g, {4, 10, 11}, f.ex, states, uniform, false);
  const auto plain = f.dec.forward(g, {4, 10, 11}, f.ex, states, uniform, true);
  CHECK((with_priors.final_dists.value() - plain.final_dists.value())
            .cwiseAbs()
            .maxCoeff() <= 1e-6);
  CHECK((with_priors.copy_d_dist.value() - plain.copy_d_dist.value())
            .cwiseAbs()
            .maxCoeff() <= 1e-6);
  CHECK((with_priors.mode_probs.value() - plain.mode_probs.value())
            .cwiseAbs()
            .maxCoeff() <= 1e-6);
}

TEST_CASE("answer representation hand oracle") {
  ag::Graph g(false);
  cse::PriorBundle pb;
  Mat priors(2, 1);
  priors << 0.4, 0.6;
  pb.passage_priors = g.input(priors);
  Mat s0(2, 1), s1(1, 1);
  s0 << 0.5, 0.5;
  s1 << 1.0;
  pb.support_priors = {g.input(s0), g.input(s1)};
  Mat h0(2, 2), h1(1, 2);
  h0 << 1.0, 2.0, 3.0, 4.0;
  h1 << 5.0, 6.0;
  pb.token_states = {g.input(h0), g.input(h1)};

  const Mat h = cse::answer_representation(g, pb).value();
  REQUIRE(h.rows() == 1);
  REQUIRE(h.cols() == 2);
  CHECK(h(0, 0) == doctest::Approx(3.8).epsilon(1e-12));
  CHECK(h(0, 1) == doctest::Approx(4.8).epsilon(1e-12));

  pb.token_states = {g.input(h0)};
  CHECK_THROWS_AS(cse::answer_representation(g, pb), std::invalid_argument);
}

TEST_CASE("sequence loss hand values") {
  ag::Graph g(false);
  // Uniform over 100 symbols: -log(1/100) = log(100).
  ag::Var uniform = g.input(Mat::Constant(2, 100, 0.01));
  CHECK(cse::rg_loss(g, uniform, {3, 97}).value()(0, 0) ==
        doctest::Approx(std::log(100.0)).epsilon(1e-12));

  // Zero probability is clamped at 1e-9.
  Mat degenerate(1, 3);
  degenerate << 0.0, 0.5, 0.5;
  CHECK(cse::rg_loss(g, g.input(degenerate), {0}).value()(0, 0) ==
        doctest::Approx(-std::log(1e-9)).epsilon(1e-12));

  CHECK_THROWS_AS(cse::rg_loss(g, uniform, {1}), std::invalid_argument);
  CHECK_THROWS_AS(cse::rg_loss(g, uniform, {1, 100}), std::invalid_argument);
}

TEST_CASE("decoder gradients match finite differences") {
  Fixture f(251);
  const std::vector<int> prefix = {4, 10, 11};
  const std::vector<int> targets = {10, 11, 5};
  auto loss = [&](bool with_grad) {
    ag::Graph g(with_grad);
    const auto states = f.reading(g);
    const auto out = f.dec.forward(g, prefix, f.ex, states,
                                   f.learned_priors(g, states), false);
    ag::Var l = cse::rg_loss(g, out.final_dists, targets);
    if (with_grad) g.backward(l);
    return l.value()(0, 0);
  };
  std::mt19937_64 rng(253);
  const auto res = testutil::check_gradients(f.store, loss, rng, 4, 1e-5);
  INFO(res.worst);
  CHECK(res.checked > 100);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("decoder rejects malformed prefixes") {
  Fixture f(261);
  ag::Graph g(false);
  const auto states = f.reading(g);
  const auto pb = f.uniform_priors(g, states);
  CHECK_THROWS_AS(f.dec.forward(g, {}, f.ex, states, pb, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      f.dec.forward(g, {4, 1, 1, 1, 1, 1, 1, 1, 1}, f.ex, states, pb, false),
      std::invalid_argument);
  CHECK_THROWS_AS(f.dec.forward(g, {4, 25}, f.ex, states, pb, false),
                  std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cse/graph.hpp"
#include "cse/params.hpp"
#include "test_util.hpp"

using namespace cse;
namespace ag = cse::ag;

namespace {

double run_check(ParamStore& store, const std::function<double(bool)>& loss,
                 int samples = 16) {
  std::mt19937_64 rng(99);
  auto res = testutil::check_gradients(store, loss, rng, samples);
  CAPTURE(res.worst);
  return res.max_rel_err;
}

}  // namespace

TEST_CASE("elementwise chain matches finite differences") {
  ParamStore store(7);
  Param& A = store.normal("A", 3, 4, 0.6);
  Param& B = store.normal("B", 3, 4, 0.6);
  Param& r = store.normal("r", 1, 4, 0.6);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A), b = graph.param(B), rv = graph.param(r);
    auto x = ag::add(a, b);
    x = ag::mul(x, ag::sigmoid(b));
    x = ag::add_rowvec(x, rv);
    x = ag::sub(x, ag::scale(ag::tanh_v(a), 0.3));
    x = ag::affine(ag::gelu(x), 1.25, -0.1);
    x = ag::mul(x, ag::one_minus(ag::sigmoid(a)));
    auto l = ag::mean_all(x);
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);
}

TEST_CASE("shape ops match finite differences") {
  ParamStore store(8);
  Param& A = store.normal("A", 3, 4, 0.5);
  Param& B = store.normal("B", 4, 5, 0.5);
  Param& C = store.normal("C", 3, 5, 0.5);
  Param& r = store.normal("r", 1, 5, 0.5);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A), b = graph.param(B), c = graph.param(C),
         rv = graph.param(r);
    auto x = ag::add(ag::matmul(a, b), c);        // 3x5
    auto t = ag::transpose(x);                    // 5x3
    auto cat = ag::concat_cols({x, c});           // 3x10
    auto s1 = ag::slice_cols(cat, 2, 5);          // 3x5
    auto s2 = ag::slice_rows(ag::concat_rows({x, c}), 1, 4);  // 4x5
    auto gr = ag::gather_rows(x, {2, 0, 1, 2});   // 4x5
    auto rep = ag::repeat_rows(rv, 4);            // 4x5
    auto y = ag::mul(ag::add(s2, gr), rep);
    auto l = ag::add(ag::sum_all(y), ag::sum_all(ag::mul(s1, x)));
    l = ag::add(l, ag::sum_all(ag::matmul(t, s1)));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);
}

TEST_CASE("gather/scatter ops match finite differences") {
  ParamStore store(9);
  Param& A = store.normal("A", 3, 4, 0.8);
  const std::vector<int> rows = {0, 1, 2, 0};
  const std::vector<int> cols = {1, 3, 2, 0};
  const std::vector<int> ids = {1, 0, 2, 1};
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A);
    auto ge = ag::gather_entries(a, rows, cols);       // 4x1
    auto sc = ag::scatter_sum_cols(a, ids, 5);         // 3x5
    auto l = ag::add(ag::sum_all(ag::tanh_v(ge)),
                     ag::mean_all(ag::mul(sc, sc)));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);

  ag::Graph graph;
  auto a = graph.param(A);
  auto sc = ag::scatter_sum_cols(a, ids, 5);
  CHECK(sc.value()(0, 1) == doctest::Approx(A.value(0, 0) + A.value(0, 3)));
  CHECK(sc.value()(1, 0) == doctest::Approx(A.value(1, 1)));
  CHECK(sc.value()(2, 4) == 0.0);  // untouched column stays exactly zero
}

TEST_CASE("mul_scalar broadcast matches finite differences") {
  ParamStore store(10);
  Param& A = store.normal("A", 3, 4, 0.5);
  Param& S = store.normal("S", 1, 1, 0.5);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A), s = graph.param(S);
    auto l = ag::mean_all(ag::tanh_v(ag::mul_scalar(a, ag::sigmoid(s))));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);
}

TEST_CASE("softmax rows matches finite differences and honors the mask") {
  ParamStore store(11);
  Param& A = store.normal("A", 3, 5, 1.0);
  Mat mask = Mat::Ones(3, 5);
  mask(0, 4) = 0;
  mask(2, 0) = 0;
  mask(2, 1) = 0;
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A);
    auto p = ag::softmax_rows(a, &mask);
    auto l = ag::sum_all(ag::mul(p, p));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);

  ag::Graph graph(false);
  auto p = ag::softmax_rows(graph.param(A), &mask);
  for (int r = 0; r < 3; ++r) {
    CHECK(p.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(p.value()(0, 4) == 0.0);  // masked key gets exactly zero mass
  CHECK(p.value()(2, 0) == 0.0);

  Mat dead = Mat::Zero(3, 5);
  CHECK_THROWS_AS(ag::softmax_rows(graph.param(A), &dead),
                  std::invalid_argument);
}

TEST_CASE("normalize_rows matches finite differences and rejects zero rows") {
  ParamStore store(12);
  Param& A = store.normal("A", 3, 4, 0.7);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A);
    auto pos = ag::affine(ag::sigmoid(a), 1.0, 0.05);
    auto p = ag::normalize_rows(pos);
    auto l = ag::sum_all(ag::mul(p, ag::sigmoid(a)));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);

  ag::Graph graph;
  auto z = graph.input(Mat::Zero(2, 3));
  CHECK_THROWS_AS(ag::normalize_rows(z), std::invalid_argument);
}

TEST_CASE("elementwise maximum matches finite differences off ties") {
  ParamStore store(13);
  Param& A = store.normal("A", 4, 3, 1.0);
  Param& B = store.normal("B", 4, 3, 1.0);
  Param& C = store.normal("C", 4, 3, 1.0);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto m = ag::maximum(
        {graph.param(A), graph.param(B), graph.param(C)});
    auto l = ag::mean_all(ag::mul(m, m));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);

  // Tied values: gradient goes to the first argmax only.
  ParamStore tied(5);
  Param& X = tied.normal("X", 4, 3, 1.0);
  Param& Y = tied.zeros("Y", 4, 3);
  Y.value = X.value;
  tied.zero_grads();
  ag::Graph graph;
  auto m = ag::maximum({graph.param(X), graph.param(Y)});
  graph.backward(ag::sum_all(m));
  CHECK(X.grad.isOnes());
  CHECK(Y.grad.isZero(0.0));
}

TEST_CASE("repeated param handles share one tape node") {
  ParamStore store(21);
  Param& A = store.normal("A", 2, 2, 1.0);
  store.zero_grads();
  ag::Graph graph;
  auto a1 = graph.param(A);
  auto a2 = graph.param(A);
  CHECK(a1.node() == a2.node());
  graph.backward(ag::sum_all(ag::mul(a1, a2)));
  CHECK((A.grad - 2.0 * A.value).norm() == doctest::Approx(0.0));
}

TEST_CASE("layer_norm matches finite differences") {
  ParamStore store(14);
  Param& A = store.normal("A", 4, 6, 1.0);
  Param& G = store.ones("G", 1, 6);
  Param& Bi = store.zeros("B", 1, 6);
  G.value(0, 2) = 1.3;
  Bi.value(0, 1) = -0.2;
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto y = ag::layer_norm(graph.param(A), graph.param(G), graph.param(Bi));
    auto l = ag::mean_all(ag::gelu(y));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-5);
}

TEST_CASE("additive attention scores match finite differences") {
  ParamStore store(15);
  Param& A = store.normal("A", 3, 5, 0.7);
  Param& B = store.normal("B", 4, 5, 0.7);
  Param& W = store.normal("w", 5, 1, 0.7);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto s = ag::additive_scores(graph.param(A), graph.param(B),
                                 graph.param(W));
    auto l = ag::mean_all(ag::mul(s, s));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);
}

TEST_CASE("log_clamped: exact log above the floor, zero gradient below") {
  ParamStore store(16);
  Param& A = store.normal("A", 3, 3, 0.5);
  auto loss = [&](bool g) {
    ag::Graph graph(g);
    auto a = graph.param(A);
    auto p = ag::affine(ag::sigmoid(a), 0.9, 0.05);  // in (0.05, 0.95)
    auto l = ag::mean_all(ag::log_clamped(p, 1e-9));
    if (g) graph.backward(l);
    return l.value()(0, 0);
  };
  CHECK(run_check(store, loss) < 1e-6);

  store.zero_grads();
  ag::Graph graph;
  auto a = graph.param(A);
  auto tiny = ag::scale(ag::sigmoid(a), 1e-12);  // all below the 1e-9 floor
  auto l = ag::sum_all(ag::log_clamped(tiny, 1e-9));
  graph.backward(l);
  CHECK(A.grad.isZero(0.0));
  CHECK(l.value()(0, 0) == doctest::Approx(9.0 * std::log(1e-9)));
}

TEST_CASE("a parameter used twice accumulates both paths") {
  ParamStore store(17);
  Param& A = store.normal("A", 2, 3, 1.0);
  store.zero_grads();
  ag::Graph graph;
  auto a = graph.param(A);
  graph.backward(ag::sum_all(ag::mul(a, a)));
  CHECK((A.grad - 2.0 * A.value).norm() == doctest::Approx(0.0));
}

TEST_CASE("inputs never accumulate gradient and forward ignores the flag") {
  ParamStore store(18);
  Param& A = store.normal("A", 2, 2, 1.0);
  Mat x = Mat::Random(2, 2);
  double with_grad, without_grad;
  {
    ag::Graph graph(true);
    auto v = ag::mul(graph.param(A), graph.input(x));
    auto l = ag::sum_all(v);
    graph.backward(l);
    with_grad = l.value()(0, 0);
  }
  {
    ag::Graph graph(false);
    auto v = ag::mul(graph.param(A), graph.input(x));
    without_grad = ag::sum_all(v).value()(0, 0);
  }
  CHECK(with_grad == without_grad);
  ag::Graph graph(false);
  CHECK_THROWS_AS(graph.backward(ag::sum_all(graph.param(A))),
                  std::logic_error);
}

TEST_CASE("gelu matches the exact erf form at reference points") {
  ag::Graph graph(false);
  Mat x(1, 3);
  x << -1.0, 0.0, 2.0;
  auto y = ag::gelu(graph.input(x));
  CHECK(y.value()(0, 0) ==
        doctest::Approx(-0.5 * (1.0 + std::erf(-1.0 / std::sqrt(2.0)))));
  CHECK(y.value()(0, 1) == 0.0);
  CHECK(y.value()(0, 2) ==
        doctest::Approx(1.0 * (1.0 + std::erf(2.0 / std::sqrt(2.0)))));
}

TEST_CASE("shape violations throw") {
  ag::Graph graph;
  auto a = graph.input(Mat::Zero(2, 3));
  auto b = graph.input(Mat::Zero(3, 2));
  CHECK_THROWS_AS(ag::add(a, b), std::logic_error);
  CHECK_THROWS_AS(ag::mul(a, b), std::logic_error);
  CHECK_THROWS_AS(ag::matmul(a, a), std::logic_error);
  CHECK_THROWS_AS(ag::slice_cols(a, 2, 2), std::logic_error);
  CHECK_THROWS_AS(ag::gather_rows(a, {5}), std::logic_error);
  CHECK_THROWS_AS(graph.backward(a), std::logic_error);  // non-scalar target
}

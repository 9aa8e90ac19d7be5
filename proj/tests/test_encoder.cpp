#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cse/encoder.hpp"
#include "test_util.hpp"

using cse::Mat;
namespace ag = cse::ag;

namespace {

cse::ModelConfig tiny_config() {
  cse::ModelConfig c;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.ffn = 32;
  c.reduce_layers = 1;
  c.vocab_size = 24;
  c.max_query_len = 12;
  c.max_passage_len = 12;
  c.max_response_len = 8;
  return c;
}

}  // namespace

TEST_CASE("mask matrices") {
  const Mat key = cse::key_mask_matrix(2, {1, 0, 1});
  CHECK(key.rows() == 2);
  CHECK(key.cols() == 3);
  CHECK(key(0, 0) == 1.0);
  CHECK(key(0, 1) == 0.0);
  CHECK(key(1, 2) == 1.0);

  const Mat causal = cse::causal_mask_matrix({1, 1, 0, 1});
  CHECK(causal(0, 0) == 1.0);
  CHECK(causal(0, 1) == 0.0);  // future key
  CHECK(causal(3, 1) == 1.0);
  CHECK(causal(3, 2) == 0.0);  // padded key stays out even in the past
  CHECK(causal(3, 3) == 1.0);
}

TEST_CASE("encoder output shape and determinism") {
  const auto config = tiny_config();
  cse::ParamStore store(7);
  cse::Param& emb = store.normal("tok", config.vocab_size, config.hidden, 0.5);
  cse::TransformerEncoder enc(store, "enc", &emb, config.max_query_len,
                              config);

  const std::vector<int> ids = {2, 7, 8, 9, 10};
  const std::vector<int> mask = {1, 1, 1, 1, 1};
  ag::Graph g1(false), g2(false);
  const Mat a = enc.forward(g1, ids, mask).value();
  const Mat b = enc.forward(g2, ids, mask).value();
  CHECK(a.rows() == 5);
  CHECK(a.cols() == config.hidden);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("padded tail does not change real rows") {
  const auto config = tiny_config();
  cse::ParamStore store(11);
  cse::Param& emb = store.normal("tok", config.vocab_size, config.hidden, 0.5);
  cse::TransformerEncoder enc(store, "enc", &emb, config.max_query_len,
                              config);

  const std::vector<int> ids = {2, 7, 8, 9};
  const std::vector<int> mask = {1, 1, 1, 1};
  std::vector<int> padded_ids = ids;
  std::vector<int> padded_mask = mask;
  padded_ids.insert(padded_ids.end(), {0, 0, 0});
  padded_mask.insert(padded_mask.end(), {0, 0, 0});

  ag::Graph g1(false), g2(false);
  const Mat plain = enc.forward(g1, ids, mask).value();
  const Mat padded = enc.forward(g2, padded_ids, padded_mask).value();
  CHECK(padded.rows() == 7);
  CHECK((padded.topRows(4) - plain).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("encoder gradients match finite differences") {
  auto config = tiny_config();
  config.layers = 2;
  cse::ParamStore store(3);
  cse::Param& emb = store.normal("tok", config.vocab_size, config.hidden, 0.5);
  cse::TransformerEncoder enc(store, "enc", &emb, config.max_query_len,
                              config);

  const std::vector<int> ids = {2, 7, 8, 9, 10, 11};
  const std::vector<int> mask = {1, 1, 1, 1, 1, 0};
  auto loss = [&](bool with_grad) {
    ag::Graph g(with_grad);
    ag::Var out = enc.forward(g, ids, mask);
    ag::Var l = ag::mean_all(ag::mul(out, out));
    if (with_grad) g.backward(l);
    return l.value()(0, 0);
  };
  std::mt19937_64 rng(17);
  const auto res = testutil::check_gradients(store, loss, rng, 6, 1e-5);
  INFO(res.worst);
  CHECK(res.checked > 100);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("decoder layers are causal") {
  const auto config = tiny_config();
  cse::ParamStore store(5);
  cse::Param& emb = store.normal("tok", config.vocab_size, config.hidden, 0.5);
  cse::Param& mem = store.normal("mem", 6, config.hidden, 0.5);
  cse::DecoderLayers dec(store, "dec", 2, config.hidden, config.heads,
                         config.ffn_size());

  const std::vector<int> self_mask = {1, 1, 1, 1};
  const std::vector<int> mem_mask = {1, 1, 1, 1, 1, 1};
  auto run = [&](const std::vector<int>& ids) {
    ag::Graph g(false);
    ag::Var x = ag::gather_rows(g.param(emb), ids);
    return dec.forward(g, x, self_mask, g.param(mem), mem_mask).value();
  };
  const Mat a = run({4, 7, 8, 9});
  const Mat b = run({4, 7, 8, 15});  // differs only at the last position
  CHECK((a.topRows(3) - b.topRows(3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.row(3) - b.row(3)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("decoder layer gradients match finite differences") {
  auto config = tiny_config();
  cse::ParamStore store(9);
  cse::Param& x = store.normal("x", 3, config.hidden, 0.5);
  cse::Param& mem = store.normal("mem", 5, config.hidden, 0.5);
  cse::DecoderLayers dec(store, "dec", 1, config.hidden, config.heads,
                         config.ffn_size());

  const std::vector<int> self_mask = {1, 1, 1};
  const std::vector<int> mem_mask = {1, 1, 1, 1, 0};
  auto loss = [&](bool with_grad) {
    ag::Graph g(with_grad);
    ag::Var out = dec.forward(g, g.param(x), self_mask, g.param(mem), mem_mask);
    ag::Var l = ag::mean_all(ag::mul(out, out));
    if (with_grad) g.backward(l);
    return l.value()(0, 0);
  };
  std::mt19937_64 rng(23);
  const auto res = testutil::check_gradients(store, loss, rng, 6, 1e-5);
  INFO(res.worst);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("dropout is inert without a noise source and deterministic with one") {
  const auto config = tiny_config();
  cse::ParamStore store(13);
  cse::Param& x = store.normal("x", 4, config.hidden, 0.5);
  cse::EncoderLayers layers(store, "enc", 1, config.hidden, config.heads,
                            config.ffn_size(), /*dropout=*/0.5);
  const std::vector<int> mask = {1, 1, 1, 1};

  ag::Graph g1(false), g2(false), g3(false), g4(false);
  const Mat off1 = layers.forward(g1, g1.param(x), mask, nullptr).value();
  const Mat off2 = layers.forward(g2, g2.param(x), mask, nullptr).value();
  CHECK((off1 - off2).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 noise_a(99), noise_b(99);
  const Mat on1 = layers.forward(g3, g3.param(x), mask, &noise_a).value();
  const Mat on2 = layers.forward(g4, g4.param(x), mask, &noise_b).value();
  CHECK((on1 - on2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((on1 - off1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("encoder rejects malformed input") {
  const auto config = tiny_config();
  cse::ParamStore store(1);
  cse::Param& emb = store.normal("tok", config.vocab_size, config.hidden, 0.5);
  cse::TransformerEncoder enc(store, "enc", &emb, /*max_len=*/4, config);

  ag::Graph g(false);
  CHECK_THROWS_AS(enc.forward(g, {2, 7, 8}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(enc.forward(g, {2, 7, 8, 9, 10}, {1, 1, 1, 1, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(enc.forward(g, {}, {}), std::invalid_argument);
}

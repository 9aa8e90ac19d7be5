#include "cse/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cse/vocab.hpp"

namespace cse {

namespace {

const ModelConfig& validated(const ModelConfig& config) {
  config.validate();
  return config;
}

Mat uniform_column(const std::vector<int>& content_mask) {
  double count = 0.0;
  for (int m : content_mask) count += m != 0 ? 1.0 : 0.0;
  Mat col = Mat::Zero(static_cast<Eigen::Index>(content_mask.size()), 1);
  if (count <= 0.0) {
    throw std::invalid_argument("passage without content tokens");
  }
  for (Eigen::Index i = 0; i < col.rows(); ++i) {
    if (content_mask[static_cast<std::size_t>(i)] != 0) col(i, 0) = 1.0 / count;
  }
  return col;
}

}  // namespace

Model::Model(const ModelConfig& config, unsigned long long seed)
    : config_(validated(config)),
      store_(seed),
      embedding_(&store_.normal("embed.tok", config.vocab_size, config.hidden,
                                0.02)),
      query_encoder_(store_, "enc.q", embedding_, config.max_query_len,
                     config),
      passage_encoder_(store_, "enc.d", embedding_, config.max_passage_len,
                       config),
      rps_(store_, "rps", config),
      sti_(store_, "sti", config),
      decoder_(store_, "dec", embedding_, config),
      drop_rng_(seed ^ 0x9e3779b97f4a7c15ull) {}

std::mt19937_64* Model::noise(const ag::Graph& g) const {
  return config_.dropout > 0.0 && g.grad_enabled() ? &drop_rng_ : nullptr;
}

Model::Reading Model::read(ag::Graph& g, const EncodedExample& ex,
                           const AblationFlags& flags) const {
  if (ex.passage_ids.empty()) {
    throw std::invalid_argument("model: example has no passages");
  }
  if (ex.passage_ids.size() != ex.passage_masks.size()) {
    throw std::invalid_argument("model: passage mask count mismatch");
  }
  std::mt19937_64* rng = noise(g);

  Reading r;
  r.h_q = query_encoder_.forward(g, ex.query_ids, ex.query_mask, rng);
  r.h_ds.reserve(ex.passage_ids.size());
  for (std::size_t i = 0; i < ex.passage_ids.size(); ++i) {
    r.h_ds.push_back(passage_encoder_.forward(g, ex.passage_ids[i],
                                              ex.passage_masks[i], rng));
  }

  std::vector<std::vector<int>> content_masks;
  content_masks.reserve(ex.passage_ids.size());
  for (const auto& ids : ex.passage_ids) {
    content_masks.push_back(content_mask_of(ids));
  }

  // The token identification block always runs: its reading states are the
  // decoder's memories even when its loss (or the selection head) is off.
  r.sti = sti_.forward(g, r.h_q, r.h_ds, ex.query_mask, ex.passage_masks,
                       content_masks, rng);
  r.priors.token_states = r.sti.dual.passages;

  const auto k = static_cast<Eigen::Index>(ex.passage_ids.size());
  if (flags.disable_rps) {
    r.priors.passage_priors =
        g.input(Mat::Constant(k, 1, 1.0 / static_cast<double>(k)));
  } else {
    r.rps = rps_.forward(g, r.h_q, r.h_ds, ex.query_mask, ex.passage_masks,
                         rng);
    r.priors.passage_priors = r.rps->probabilities;
  }

  if (flags.disable_sti) {
    r.priors.support_priors.clear();
    for (const auto& mask : content_masks) {
      r.priors.support_priors.push_back(g.input(uniform_column(mask)));
    }
  } else {
    r.priors.support_priors = r.sti.support_priors;
  }
  return r;
}

ModelOutput Model::forward(ag::Graph& g, const EncodedExample& ex,
                           const WeakSupportLabels* weak,
                           const AblationFlags& flags) const {
  Reading r = read(g, ex, flags);

  ModelOutput out;
  out.rps = r.rps;
  out.sti = r.sti;
  out.priors = r.priors;

  if (!flags.disable_rps) {
    out.l_rps = rps_loss(g, r.rps->probabilities, ex.relevance);
  }

  const bool has_response = ex.response_ids.size() >= 2;
  if (!flags.disable_sti && has_response) {
    if (weak == nullptr) {
      throw std::invalid_argument(
          "model: weak labels required for the token identification loss");
    }
    std::vector<std::vector<int>> content_masks;
    for (const auto& ids : ex.passage_ids) {
      content_masks.push_back(content_mask_of(ids));
    }
    out.l_sti = sti_loss(g, r.sti.probabilities, *weak, content_masks);
  }

  if (has_response) {
    std::vector<int> prefix(ex.response_ids.begin(),
                            ex.response_ids.end() - 1);
    std::vector<int> targets(ex.response_ids.begin() + 1,
                             ex.response_ids.end());
    out.decode = decoder_.forward(g, prefix, ex, r.sti.dual, r.priors,
                                  flags.plain_pointer, noise(g));
    out.l_rg = rg_loss(g, out.decode->final_dists, targets);
  }
  return out;
}

std::vector<int> Model::generate(const EncodedExample& ex,
                                 const GenerationOptions& options,
                                 const AblationFlags& flags) const {
  const int max_len = std::min(options.max_len, config_.max_response_len);
  if (max_len < 2) {
    throw std::invalid_argument("generate: max length too small");
  }
  ag::Graph g(/*grad_enabled=*/false);
  Reading r = read(g, ex, flags);

  // One decoder pass over a candidate prefix; returns the last row of the
  // mixture as plain probabilities.
  auto step = [&](const std::vector<int>& prefix) {
    DecodeResult d = decoder_.forward(g, prefix, ex, r.sti.dual, r.priors,
                                      flags.plain_pointer, nullptr);
    return Eigen::VectorXd(
        d.final_dists.value().row(d.final_dists.rows() - 1));
  };

  struct Beam {
    std::vector<int> ids;  // includes leading [BOS]
    double log_prob = 0.0;
    bool done = false;

    double normalized() const {
      const auto steps = static_cast<double>(ids.size() - 1);
      return steps > 0 ? log_prob / steps : log_prob;
    }
  };

  const int width = options.strategy == GenerationOptions::Strategy::kGreedy
                        ? 1
                        : std::max(1, options.beam_size);
  std::vector<Beam> live{Beam{{Vocabulary::kBos}, 0.0, false}};
  std::vector<Beam> finished;

  while (!live.empty()) {
    std::vector<Beam> candidates;
    for (const Beam& beam : live) {
      const Eigen::VectorXd probs = step(beam.ids);
      // Top `width` next tokens for this beam.
      std::vector<int> order(static_cast<std::size_t>(probs.size()));
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(),
                        order.begin() + std::min<std::size_t>(
                                            order.size(),
                                            static_cast<std::size_t>(width)),
                        order.end(), [&](int a, int b) {
                          if (probs(a) != probs(b)) return probs(a) > probs(b);
                          return a < b;
                        });
      for (int i = 0; i < width && i < probs.size(); ++i) {
        const int id = order[static_cast<std::size_t>(i)];
        Beam next = beam;
        next.ids.push_back(id);
        next.log_prob += std::log(std::max(probs(id), 1e-300));
        next.done = id == Vocabulary::kEos;
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) {
                       return a.log_prob > b.log_prob;
                     });
    if (candidates.size() > static_cast<std::size_t>(width)) {
      candidates.resize(static_cast<std::size_t>(width));
    }

    live.clear();
    for (Beam& beam : candidates) {
      if (beam.done) {
        finished.push_back(std::move(beam));
      } else if (static_cast<int>(beam.ids.size()) >= max_len) {
        beam.done = true;
        finished.push_back(std::move(beam));
      } else {
        live.push_back(std::move(beam));
      }
    }
    if (static_cast<int>(finished.size()) >= width) break;
  }
  for (Beam& beam : live) finished.push_back(std::move(beam));

  const Beam* best = nullptr;
  for (const Beam& beam : finished) {
    if (best == nullptr || beam.normalized() > best->normalized()) {
      best = &beam;
    }
  }

  std::vector<int> out;
  for (std::size_t i = 1; i < best->ids.size(); ++i) {
    if (best->ids[i] == Vocabulary::kEos) break;
    out.push_back(best->ids[i]);
  }
  return out;
}

std::vector<double> Model::rank_passages(const EncodedExample& ex,
                                         const AblationFlags& flags) const {
  if (flags.disable_rps) {
    return std::vector<double>(ex.passage_ids.size(), 0.5);
  }
  ag::Graph g(/*grad_enabled=*/false);
  ag::Var h_q = query_encoder_.forward(g, ex.query_ids, ex.query_mask);
  std::vector<ag::Var> h_ds;
  h_ds.reserve(ex.passage_ids.size());
  for (std::size_t i = 0; i < ex.passage_ids.size(); ++i) {
    h_ds.push_back(
        passage_encoder_.forward(g, ex.passage_ids[i], ex.passage_masks[i]));
  }
  return rps_.forward(g, h_q, h_ds, ex.query_mask, ex.passage_masks).scores;
}

}  // namespace cse

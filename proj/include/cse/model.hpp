#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cse/decoder.hpp"
#include "cse/rps.hpp"
#include "cse/sti.hpp"

namespace cse {

struct AblationFlags {
  bool disable_rps = false;
  bool disable_sti = false;
  bool plain_pointer = false;
};

struct ModelOutput {
  ag::Var l_rps;  // invalid when RPS disabled
  ag::Var l_sti;  // invalid when STI disabled
  ag::Var l_rg;   // invalid when the example has no response
  std::optional<RpsOutput> rps;
  StiOutput sti;
  std::optional<DecodeResult> decode;
  PriorBundle priors;
};

struct GenerationOptions {
  enum class Strategy { kGreedy, kBeam };
  Strategy strategy = Strategy::kGreedy;
  int beam_size = 4;
  int max_len = 64;
};

// The full multi-task model: shared token embeddings, query/passage encoder
// stacks, the two interaction heads, and the pointer-generator decoder.
class Model {
 public:
  Model(const ModelConfig& config, unsigned long long seed);

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return config_; }

  // Forward pass for one example. Weak labels are required when a response
  // is present and STI is enabled. Losses are left on the graph so the
  // caller can combine and backpropagate.
  ModelOutput forward(ag::Graph& g, const EncodedExample& ex,
                      const WeakSupportLabels* weak,
                      const AblationFlags& flags) const;

  // Greedy/beam decoding from [BOS]; returns content ids without [BOS]/[EOS].
  std::vector<int> generate(const EncodedExample& ex,
                            const GenerationOptions& options,
                            const AblationFlags& flags) const;

  // Relevance scores for ranking metrics. With RPS disabled every passage
  // scores 0.5 (uninformed).
  std::vector<double> rank_passages(const EncodedExample& ex,
                                    const AblationFlags& flags) const;

 private:
  // Shared encode + heads for one example on an existing graph.
  struct Reading {
    ag::Var h_q;
    std::vector<ag::Var> h_ds;
    std::optional<RpsOutput> rps;
    StiOutput sti;
    PriorBundle priors;
  };
  Reading read(ag::Graph& g, const EncodedExample& ex,
               const AblationFlags& flags) const;

  // Dropout noise source; only consulted on gradient-enabled graphs.
  std::mt19937_64* noise(const ag::Graph& g) const;

  ModelConfig config_;
  ParamStore store_;
  Param* embedding_;
  TransformerEncoder query_encoder_;
  TransformerEncoder passage_encoder_;
  RpsHead rps_;
  StiHead sti_;
  ResponseDecoder decoder_;
  mutable std::mt19937_64 drop_rng_;
};

}  // namespace cse

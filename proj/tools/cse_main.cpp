// Command-line entry point: prepare | stats | train | eval | generate.
//
// Machine-readable results go to stdout (or files named by flags); progress
// goes to stderr. Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cse/corpus.hpp"
#include "cse/metrics.hpp"
#include "cse/model.hpp"
#include "cse/trainer.hpp"
#include "cse/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Encoded dataset (JSONL, one example per line). Masks are not stored: the
// encoder never pads, so they are all-ones vectors of matching length.

json encoded_to_json(const cse::EncodedExample& ex) {
  return json{{"conversation_id", ex.conversation_id},
              {"turn_index", ex.turn_index},
              {"query_ids", ex.query_ids},
              {"passage_names", ex.passage_names},
              {"passage_ids", ex.passage_ids},
              {"relevance", ex.relevance},
              {"response_ids", ex.response_ids}};
}

cse::EncodedExample encoded_from_json(const json& j) {
  cse::EncodedExample ex;
  ex.conversation_id = j.at("conversation_id").get<std::string>();
  ex.turn_index = j.at("turn_index").get<int>();
  ex.query_ids = j.at("query_ids").get<std::vector<int>>();
  ex.passage_names = j.at("passage_names").get<std::vector<std::string>>();
  ex.passage_ids = j.at("passage_ids").get<std::vector<std::vector<int>>>();
  ex.relevance = j.at("relevance").get<std::vector<int>>();
  ex.response_ids = j.at("response_ids").get<std::vector<int>>();
  ex.query_mask.assign(ex.query_ids.size(), 1);
  for (const auto& ids : ex.passage_ids) {
    ex.passage_masks.emplace_back(ids.size(), 1);
  }
  return ex;
}

std::vector<cse::EncodedExample> read_encoded(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw cse::DataError("cannot open " + path.string());
  std::vector<cse::EncodedExample> out;
  std::string line;
  long long n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(encoded_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw cse::DataError(path.string() + ": line " + std::to_string(n) +
                           ": " + e.what());
    }
  }
  if (out.empty()) throw cse::DataError(path.string() + ": no examples");
  return out;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string input;
  std::string out_dir;
  std::string vocab_file;  // reuse an existing vocabulary instead of building
  int vocab_size = 30522;
  cse::LengthLimits limits;
};

void run_prepare(const PrepareArgs& a) {
  const auto examples = cse::load_examples(a.input);
  if (examples.empty()) throw cse::DataError(a.input + ": no examples");

  std::vector<std::string> texts;
  for (const auto& ex : examples) {
    for (const auto& q : ex.queries) texts.push_back(q);
    for (const auto& p : ex.passages) texts.push_back(p.text);
    if (!ex.response.empty()) texts.push_back(ex.response);
  }
  const cse::Vocabulary vocab =
      a.vocab_file.empty()
          ? cse::Vocabulary::build(texts, static_cast<std::size_t>(a.vocab_size))
          : cse::Vocabulary::from_file(a.vocab_file);

  cse::FrequencyTable freq;
  for (const auto& t : texts) {
    for (int id : vocab.encode(t)) freq.add(id);
  }

  std::vector<cse::EncodedExample> encoded;
  encoded.reserve(examples.size());
  for (const auto& ex : examples) {
    encoded.push_back(cse::encode_example(ex, vocab, a.limits));
  }

  const fs::path out = a.out_dir;
  fs::create_directories(out);
  {
    std::ofstream os(out / "encoded.jsonl", std::ios::trunc);
    if (!os) throw cse::RuntimeFailure("cannot write " +
                                       (out / "encoded.jsonl").string());
    for (const auto& ex : encoded) os << encoded_to_json(ex).dump() << "\n";
  }
  vocab.save(out / "vocab.txt");
  freq.save(out / "freq.tsv", vocab);

  json summary{{"num_examples", encoded.size()},
               {"vocab_size", vocab.size()},
               {"vocab_fingerprint", vocab.fingerprint()},
               {"limits",
                {{"max_query_tokens", a.limits.max_query_tokens},
                 {"max_passage_tokens", a.limits.max_passage_tokens},
                 {"max_response_tokens", a.limits.max_response_tokens}}}};
  {
    std::ofstream os(out / "prepare.json", std::ios::trunc);
    os << summary.dump(2) << "\n";
  }
  std::cerr << "prepared " << encoded.size() << " examples -> " << out.string()
            << " (vocabulary " << vocab.size() << " entries)\n";
  std::cout << summary.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// stats

void run_stats(const std::string& input, long long common_threshold) {
  const auto examples = cse::load_examples(input);
  if (examples.empty()) throw cse::DataError(input + ": empty dataset");
  const auto report = cse::corpus_statistics(examples, common_threshold);
  std::cerr << "computed statistics over " << report.num_examples
            << " examples\n";
  std::cout << report.to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data_dir;
  std::string out_dir;
  std::string model_config_file;
  std::vector<int> windows{2, 3};
  cse::TrainConfig tc;
};

void run_train(const TrainArgs& a) {
  a.tc.validate();
  const fs::path data = a.data_dir;
  const auto vocab = cse::Vocabulary::from_file(data / "vocab.txt");
  const auto freq = cse::FrequencyTable::from_file(data / "freq.tsv", vocab);
  const auto examples = read_encoded(data / "encoded.jsonl");

  const fs::path out = a.out_dir;
  cse::ModelConfig mc;
  long long start = 0;
  const bool resuming = fs::exists(out / "config.json");
  if (resuming) {
    const auto meta = cse::read_checkpoint_meta(out);
    if (meta.vocab_fingerprint != vocab.fingerprint()) {
      throw cse::DataError(
          "checkpoint in " + out.string() +
          " was trained with a different vocabulary; refusing to resume");
    }
    mc = meta.model;
    if (!a.model_config_file.empty()) {
      std::cerr << "note: resuming from " << out.string()
                << "; --model-config is ignored\n";
    }
    start = meta.step;
    if (start >= a.tc.total_steps) {
      std::cerr << "checkpoint is already at step " << start
                << "; nothing to do\n";
      std::cout << json{{"checkpoint", out.string()}, {"steps", start}}.dump(2)
                << "\n";
      return;
    }
  } else {
    if (!a.model_config_file.empty()) {
      std::ifstream is(a.model_config_file);
      if (!is) {
        throw cse::DataError("cannot open " + a.model_config_file);
      }
      json j = json::parse(is, nullptr, false);
      if (j.is_discarded()) {
        throw cse::DataError(a.model_config_file + ": invalid JSON");
      }
      mc = j.get<cse::ModelConfig>();
    }
    // The embedding table and position tables are sized by the data, not by
    // whatever the config file said.
    mc.vocab_size = static_cast<int>(vocab.size());
    for (const auto& ex : examples) {
      mc.max_query_len =
          std::max(mc.max_query_len, static_cast<int>(ex.query_ids.size()));
      for (const auto& ids : ex.passage_ids) {
        mc.max_passage_len =
            std::max(mc.max_passage_len, static_cast<int>(ids.size()));
      }
      mc.max_response_len = std::max(
          mc.max_response_len, static_cast<int>(ex.response_ids.size()));
    }
  }
  mc.validate();

  cse::Model model(mc, a.tc.seed);
  if (resuming) cse::load_checkpoint(out, model.params(), vocab);

  std::vector<cse::WeakSupportLabels> weak;
  if (!a.tc.disable_sti) {
    weak.reserve(examples.size());
    for (const auto& ex : examples) {
      weak.push_back(cse::compute_weak_labels(ex.passage_ids, ex.response_ids,
                                              freq, a.windows));
    }
  }

  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl",
                    start > 0 ? std::ios::app : std::ios::trunc);
  if (!log) {
    throw cse::RuntimeFailure("cannot write " +
                              (out / "train_log.jsonl").string());
  }

  std::cerr << "training on " << examples.size() << " examples, steps "
            << (start + 1) << ".." << a.tc.total_steps << " -> "
            << out.string() << "\n";
  cse::Trainer trainer(model, a.tc, vocab);
  trainer.train(examples, weak.empty() ? nullptr : &weak, out, &log, start);
  const double final_loss =
      trainer.history().empty() ? 0.0 : trainer.history().back().loss;
  std::cerr << "finished at step " << a.tc.total_steps << " (loss "
            << final_loss << ")\n";
  std::cout << json{{"checkpoint", out.string()},
                    {"steps", a.tc.total_steps},
                    {"final_loss", final_loss}}
                   .dump(2)
            << "\n";
}

// ---------------------------------------------------------------------------
// eval / generate

struct AblationCli {
  bool disable_rps = false;
  bool disable_sti = false;
  bool plain_pointer = false;
  CLI::Option* o_rps = nullptr;
  CLI::Option* o_sti = nullptr;
  CLI::Option* o_pp = nullptr;

  void add(CLI::App* cmd) {
    o_rps = cmd->add_flag("--disable-rps,!--no-disable-rps", disable_rps,
                          "uninformed passage priors (every passage 0.5)");
    o_sti = cmd->add_flag("--disable-sti,!--no-disable-sti", disable_sti,
                          "uniform supporting-token priors");
    o_pp = cmd->add_flag("--plain-pointer,!--no-plain-pointer", plain_pointer,
                         "prior-free copy distribution");
  }

  // Flags the user did not touch fall back to how the checkpoint was trained.
  cse::AblationFlags resolve(const cse::TrainConfig& stored) const {
    cse::AblationFlags f;
    f.disable_rps = o_rps->count() > 0 ? disable_rps : stored.disable_rps;
    f.disable_sti = o_sti->count() > 0 ? disable_sti : stored.disable_sti;
    f.plain_pointer = o_pp->count() > 0 ? plain_pointer : stored.plain_pointer;
    return f;
  }
};

struct LoadedModel {
  cse::Vocabulary vocab;
  cse::CheckpointMeta meta;
  std::unique_ptr<cse::Model> model;
};

LoadedModel load_model(const std::string& checkpoint,
                       std::optional<bool> use_ema) {
  const fs::path dir = checkpoint;
  auto meta = cse::read_checkpoint_meta(dir);
  auto vocab = cse::Vocabulary::from_file(dir / "vocab.txt");
  if (meta.vocab_fingerprint != vocab.fingerprint()) {
    throw cse::DataError("checkpoint " + dir.string() +
                         ": vocab.txt does not match the stored fingerprint");
  }
  auto model = std::make_unique<cse::Model>(meta.model, 1);
  cse::load_checkpoint(dir, model->params(), vocab);
  if (use_ema.value_or(meta.train.use_ema_for_eval)) {
    model->params().ema_to_value_swap();
    std::cerr << "evaluating with EMA weights\n";
  }
  return LoadedModel{std::move(vocab), std::move(meta), std::move(model)};
}

std::vector<cse::EncodedExample> read_eval_data(const fs::path& data_dir,
                                                const cse::Vocabulary& vocab) {
  const auto data_vocab = cse::Vocabulary::from_file(data_dir / "vocab.txt");
  if (data_vocab.fingerprint() != vocab.fingerprint()) {
    throw cse::DataError(
        "prepared data in " + data_dir.string() +
        " uses a different vocabulary than the checkpoint; refusing to run");
  }
  return read_encoded(data_dir / "encoded.jsonl");
}

struct EvalArgs {
  std::string data_dir;
  std::string checkpoint;
  std::string rankings_file;
  std::string hypotheses_file;
  bool smooth_bleu = false;
  bool use_ema_for_eval = true;
  CLI::Option* o_ema = nullptr;
  AblationCli ablations;
};

void run_eval(const EvalArgs& a) {
  auto lm = load_model(a.checkpoint, a.o_ema->count() > 0
                                         ? std::optional<bool>(a.use_ema_for_eval)
                                         : std::nullopt);
  const auto examples = read_eval_data(a.data_dir, lm.vocab);
  const auto flags = a.ablations.resolve(lm.meta.train);

  cse::GenerationOptions opt;
  opt.strategy = cse::GenerationOptions::Strategy::kGreedy;
  opt.max_len = lm.meta.model.max_response_len;

  std::ofstream rank_os, hyp_os;
  if (!a.rankings_file.empty()) {
    rank_os.open(a.rankings_file, std::ios::trunc);
    if (!rank_os) throw cse::RuntimeFailure("cannot write " + a.rankings_file);
  }
  if (!a.hypotheses_file.empty()) {
    hyp_os.open(a.hypotheses_file, std::ios::trunc);
    if (!hyp_os) throw cse::RuntimeFailure("cannot write " + a.hypotheses_file);
  }

  cse::MetricsAccumulator acc;
  long long done = 0;
  for (const auto& ex : examples) {
    const auto scores = lm.model->rank_passages(ex, flags);
    const auto ranking = cse::ranking_from_scores(scores);
    bool any_relevant = false;
    for (int r : ex.relevance) any_relevant |= (r == 1);
    if (any_relevant) acc.add_ranking(ranking, ex.relevance);
    if (rank_os) {
      rank_os << json{{"example", ex.conversation_id},
                      {"turn_index", ex.turn_index},
                      {"ranking", ranking},
                      {"scores", scores}}
                     .dump()
              << "\n";
    }
    if (ex.response_ids.size() >= 2) {
      const auto hyp_ids = lm.model->generate(ex, opt, flags);
      const std::string hyp = lm.vocab.decode(hyp_ids);
      const std::string ref = lm.vocab.decode(ex.response_ids);
      acc.add_generation(hyp, ref, a.smooth_bleu);
      if (hyp_os) {
        hyp_os << json{{"conversation_id", ex.conversation_id},
                       {"turn_index", ex.turn_index},
                       {"hypothesis", hyp},
                       {"reference", ref}}
                      .dump()
               << "\n";
      }
    }
    if (++done % 25 == 0) {
      std::cerr << "evaluated " << done << "/" << examples.size() << "\n";
    }
  }
  std::cerr << "evaluated " << done << " examples\n";
  std::cout << acc.report().to_json().dump(2) << "\n";
}

struct GenerateArgs {
  std::string data_dir;
  std::string checkpoint;
  std::string out_file = "-";  // "-" writes to stdout
  std::string strategy = "greedy";
  int beam_size = 4;
  int max_len = 0;  // 0: use the model's response limit
  bool use_ema_for_eval = true;
  CLI::Option* o_ema = nullptr;
  AblationCli ablations;
};

void run_generate(const GenerateArgs& a) {
  auto lm = load_model(a.checkpoint, a.o_ema->count() > 0
                                         ? std::optional<bool>(a.use_ema_for_eval)
                                         : std::nullopt);
  const auto examples = read_eval_data(a.data_dir, lm.vocab);
  const auto flags = a.ablations.resolve(lm.meta.train);

  cse::GenerationOptions opt;
  opt.strategy = a.strategy == "beam"
                     ? cse::GenerationOptions::Strategy::kBeam
                     : cse::GenerationOptions::Strategy::kGreedy;
  opt.beam_size = a.beam_size;
  opt.max_len = a.max_len > 0
                    ? std::min(a.max_len, lm.meta.model.max_response_len)
                    : lm.meta.model.max_response_len;

  std::ofstream file_os;
  if (a.out_file != "-") {
    file_os.open(a.out_file, std::ios::trunc);
    if (!file_os) throw cse::RuntimeFailure("cannot write " + a.out_file);
  }
  std::ostream& os = a.out_file == "-" ? std::cout : file_os;

  long long done = 0;
  for (const auto& ex : examples) {
    const auto hyp_ids = lm.model->generate(ex, opt, flags);
    os << json{{"conversation_id", ex.conversation_id},
               {"turn_index", ex.turn_index},
               {"hypothesis", lm.vocab.decode(hyp_ids)},
               {"reference", lm.vocab.decode(ex.response_ids)}}
              .dump()
       << "\n";
    if (++done % 25 == 0) {
      std::cerr << "generated " << done << "/" << examples.size() << "\n";
    }
  }
  std::cerr << "generated " << done << " responses ("
            << (opt.strategy == cse::GenerationOptions::Strategy::kBeam
                    ? "beam"
                    : "greedy")
            << ")\n";
}

void add_train_flags(CLI::App* cmd, cse::TrainConfig& tc) {
  cmd->add_option("--peak_lr", tc.peak_lr, "peak learning rate");
  cmd->add_option("--warmup_steps", tc.warmup_steps, "linear warmup steps");
  cmd->add_option("--total_steps", tc.total_steps, "total optimization steps");
  cmd->add_option("--clip_norm", tc.clip_norm, "global gradient norm cap");
  cmd->add_option("--beta1", tc.beta1, "Adam beta1");
  cmd->add_option("--beta2", tc.beta2, "Adam beta2");
  cmd->add_option("--adam_eps", tc.adam_eps, "Adam epsilon");
  cmd->add_option("--ema_decay", tc.ema_decay, "parameter EMA decay");
  cmd->add_option("--lambda_rps", tc.lambda_rps, "passage-selection loss weight");
  cmd->add_option("--lambda_sti", tc.lambda_sti, "supporting-token loss weight");
  cmd->add_option("--lambda_rg", tc.lambda_rg, "generation loss weight");
  cmd->add_option("--batch_size", tc.batch_size, "examples per step");
  cmd->add_option("--seed", tc.seed, "random seed");
  cmd->add_option("--checkpoint_every", tc.checkpoint_every,
                  "steps between checkpoints");
  cmd->add_option("--log_every", tc.log_every, "steps between log lines");
  cmd->add_flag("--use_ema_for_eval,!--no-use_ema_for_eval",
                tc.use_ema_for_eval, "evaluate with EMA weights");
  cmd->add_flag("--disable-rps", tc.disable_rps,
                "train without the passage-selection loss");
  cmd->add_flag("--disable-sti", tc.disable_sti,
                "train without the supporting-token loss");
  cmd->add_flag("--plain-pointer", tc.plain_pointer,
                "train with the prior-free copy distribution");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conversational passage-grounded response generation"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand(
      "prepare", "tokenize a raw JSONL dataset into a training directory");
  prepare->add_option("--input", prep.input, "raw JSONL dataset")->required();
  prepare->add_option("--out", prep.out_dir, "output directory")->required();
  prepare->add_option("--vocab", prep.vocab_file,
                      "reuse this vocabulary file instead of building one");
  prepare->add_option("--vocab_size", prep.vocab_size,
                      "vocabulary budget when building");
  prepare->add_option("--max_query_tokens", prep.limits.max_query_tokens,
                      "query history token cap");
  prepare->add_option("--max_passage_tokens", prep.limits.max_passage_tokens,
                      "per-passage token cap");
  prepare->add_option("--max_response_tokens", prep.limits.max_response_tokens,
                      "response token cap");
  prepare->callback([&] { run_prepare(prep); });

  std::string stats_input;
  long long stats_threshold = 100000;
  auto* stats = app.add_subcommand(
      "stats", "print corpus statistics for a raw JSONL dataset");
  stats->add_option("--input", stats_input, "raw JSONL dataset")->required();
  stats->add_option("--common_threshold", stats_threshold,
                    "frequency rank cutoff for common words");
  stats->callback([&] { run_stats(stats_input, stats_threshold); });

  TrainArgs train_args;
  if (const char* env = std::getenv("CSE_CONFIG"); env != nullptr) {
    std::ifstream is(env);
    if (is) {
      json j = json::parse(is, nullptr, false);
      if (!j.is_discarded() && j.contains("train")) {
        train_args.tc = j["train"].get<cse::TrainConfig>();
      }
    }
  }
  auto* train = app.add_subcommand(
      "train", "train a model on a prepared dataset directory");
  train->add_option("--data", train_args.data_dir, "prepared dataset directory")
      ->required();
  train->add_option("--out", train_args.out_dir,
                    "checkpoint directory (resumes if one exists)")
      ->required();
  train->add_option("--model-config", train_args.model_config_file,
                    "JSON file with model dimensions");
  train->add_option("--windows", train_args.windows,
                    "window sizes for weak supporting-token labels");
  add_train_flags(train, train_args.tc);
  train->callback([&] { run_train(train_args); });

  EvalArgs eval_args;
  auto* eval = app.add_subcommand(
      "eval", "compute generation and ranking metrics for a checkpoint");
  eval->add_option("--data", eval_args.data_dir, "prepared dataset directory")
      ->required();
  eval->add_option("--checkpoint", eval_args.checkpoint,
                   "checkpoint directory")
      ->required();
  eval->add_option("--rankings", eval_args.rankings_file,
                   "write per-example rankings to this JSONL file");
  eval->add_option("--hypotheses", eval_args.hypotheses_file,
                   "write greedy hypotheses to this JSONL file");
  eval->add_flag("--smooth_bleu", eval_args.smooth_bleu,
                 "add-one smoothed BLEU precisions");
  eval_args.o_ema =
      eval->add_flag("--use_ema_for_eval,!--no-use_ema_for_eval",
                     eval_args.use_ema_for_eval,
                     "evaluate with EMA weights (default: as trained)");
  eval_args.ablations.add(eval);
  eval->callback([&] { run_eval(eval_args); });

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand(
      "generate", "decode responses for a prepared dataset");
  gen->add_option("--data", gen_args.data_dir, "prepared dataset directory")
      ->required();
  gen->add_option("--checkpoint", gen_args.checkpoint, "checkpoint directory")
      ->required();
  gen->add_option("--out", gen_args.out_file,
                  "output JSONL file; '-' for stdout");
  gen->add_option("--strategy", gen_args.strategy, "decoding strategy")
      ->check(CLI::IsMember({"greedy", "beam"}));
  gen->add_option("--beam_size", gen_args.beam_size, "beam width");
  gen->add_option("--max_len", gen_args.max_len,
                  "decoding length cap (0: model limit)");
  gen_args.o_ema =
      gen->add_flag("--use_ema_for_eval,!--no-use_ema_for_eval",
                    gen_args.use_ema_for_eval,
                    "decode with EMA weights (default: as trained)");
  gen_args.ablations.add(gen);
  gen->callback([&] { run_generate(gen_args); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const cse::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const cse::RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 3;
  }
}

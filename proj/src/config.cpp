#include "cse/config.hpp"

namespace cse {

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"ffn", c.ffn},
                     {"reduce_layers", c.reduce_layers},
                     {"dropout", c.dropout},
                     {"max_query_len", c.max_query_len},
                     {"max_passage_len", c.max_passage_len},
                     {"max_response_len", c.max_response_len},
                     {"vocab_size", c.vocab_size}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.ffn = j.value("ffn", d.ffn);
  c.reduce_layers = j.value("reduce_layers", d.reduce_layers);
  c.dropout = j.value("dropout", d.dropout);
  c.max_query_len = j.value("max_query_len", d.max_query_len);
  c.max_passage_len = j.value("max_passage_len", d.max_passage_len);
  c.max_response_len = j.value("max_response_len", d.max_response_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"peak_lr", c.peak_lr},
                     {"warmup_steps", c.warmup_steps},
                     {"total_steps", c.total_steps},
                     {"clip_norm", c.clip_norm},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"ema_decay", c.ema_decay},
                     {"lambda_rps", c.lambda_rps},
                     {"lambda_sti", c.lambda_sti},
                     {"lambda_rg", c.lambda_rg},
                     {"batch_size", c.batch_size},
                     {"disable_rps", c.disable_rps},
                     {"disable_sti", c.disable_sti},
                     {"plain_pointer", c.plain_pointer},
                     {"use_ema_for_eval", c.use_ema_for_eval},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.total_steps = j.value("total_steps", d.total_steps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.lambda_rps = j.value("lambda_rps", d.lambda_rps);
  c.lambda_sti = j.value("lambda_sti", d.lambda_sti);
  c.lambda_rg = j.value("lambda_rg", d.lambda_rg);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.disable_rps = j.value("disable_rps", d.disable_rps);
  c.disable_sti = j.value("disable_sti", d.disable_sti);
  c.plain_pointer = j.value("plain_pointer", d.plain_pointer);
  c.use_ema_for_eval = j.value("use_ema_for_eval", d.use_ema_for_eval);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.log_every = j.value("log_every", d.log_every);
}

}  // namespace cse

#include "cse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cse {

namespace fs = std::filesystem;

double lr_schedule(long long step, double peak_lr, long long warmup_steps,
                   long long total_steps) {
  if (step <= 0 || total_steps <= 0 || step > total_steps) return 0.0;
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak_lr * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
  }
  constexpr double kPi = 3.14159265358979323846;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak_lr * (1.0 + std::cos(kPi * progress)) / 2.0;
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2,
               double eps, long long t) {
  if (t < 1) throw std::invalid_argument("adam_step: t is 1-based");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Param* p : store.all()) {
    if (p->adam_m.size() == 0) {
      p->adam_m = Mat::Zero(p->value.rows(), p->value.cols());
    }
    if (p->adam_v.size() == 0) {
      p->adam_v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
    p->adam_v = beta2 * p->adam_v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    const Mat m_hat = p->adam_m / bc1;
    const Mat v_hat = p->adam_v / bc2;
    p->value.array() -=
        lr * m_hat.array() / (v_hat.array().sqrt() + eps);
  }
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j{{"step", step}, {"lr", lr}, {"loss", loss}};
  if (l_rps) j["l_rps"] = *l_rps;
  if (l_sti) j["l_sti"] = *l_sti;
  if (l_rg) j["l_rg"] = *l_rg;
  j["grad_norm"] = grad_norm;
  return j;
}

namespace {

void atomic_write(const fs::path& path,
                  const std::function<void(std::ostream&)>& body) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("cannot write " + tmp.string());
    body(os);
    os.flush();
    if (!os) throw RuntimeFailure("failed while writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ModelConfig& model_config,
                     const TrainConfig& train_config, const Vocabulary& vocab,
                     const ParamStore& store, long long step) {
  fs::create_directories(dir);
  nlohmann::json config{{"model", model_config},
                        {"train", train_config},
                        {"vocab_fingerprint", vocab.fingerprint()}};
  atomic_write(dir / "config.json",
               [&](std::ostream& os) { os << config.dump(2) << "\n"; });
  atomic_write(dir / "weights.bin",
               [&](std::ostream& os) { store.save_values(os); });
  atomic_write(dir / "ema.bin", [&](std::ostream& os) { store.save_ema(os); });
  atomic_write(dir / "optimizer.bin",
               [&](std::ostream& os) { store.save_optimizer(os); });
  atomic_write(dir / "step",
               [&](std::ostream& os) { os << step << "\n"; });
  const fs::path vocab_tmp = dir / "vocab.txt.tmp";
  vocab.save(vocab_tmp);
  fs::rename(vocab_tmp, dir / "vocab.txt");
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  std::ifstream config_in(dir / "config.json");
  if (!config_in) {
    throw DataError("checkpoint: missing " + (dir / "config.json").string());
  }
  nlohmann::json j = nlohmann::json::parse(config_in, nullptr, false);
  if (j.is_discarded()) {
    throw DataError("checkpoint: invalid config.json in " + dir.string());
  }
  CheckpointMeta meta;
  try {
    meta.model = j.at("model").get<ModelConfig>();
    meta.train = j.at("train").get<TrainConfig>();
    meta.vocab_fingerprint = j.at("vocab_fingerprint").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed config.json: ") +
                    e.what());
  }
  std::ifstream step_in(dir / "step");
  if (!step_in || !(step_in >> meta.step)) {
    throw DataError("checkpoint: missing step file in " + dir.string());
  }
  return meta;
}

void load_checkpoint(const fs::path& dir, ParamStore& store,
                     const Vocabulary& vocab) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  if (meta.vocab_fingerprint != vocab.fingerprint()) {
    throw DataError(
        "checkpoint: vocabulary does not match the one it was trained with");
  }
  auto open = [&](const char* name) {
    std::ifstream is(dir / name, std::ios::binary);
    if (!is) throw DataError("checkpoint: missing " + (dir / name).string());
    return is;
  };
  auto weights = open("weights.bin");
  store.load_values(weights);
  auto ema = open("ema.bin");
  store.load_ema(ema);
  auto opt = open("optimizer.bin");
  store.load_optimizer(opt);
}

Trainer::Trainer(Model& model, const TrainConfig& config,
                 const Vocabulary& vocab)
    : model_(model), config_(config), vocab_(vocab), shuffle_rng_(config.seed) {
  config_.validate();
}

std::vector<std::size_t> Trainer::next_batch(std::size_t n) {
  std::vector<std::size_t> batch;
  batch.reserve(static_cast<std::size_t>(config_.batch_size));
  while (batch.size() < static_cast<std::size_t>(config_.batch_size)) {
    if (cursor_ >= order_.size()) {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), 0);
      std::shuffle(order_.begin(), order_.end(), shuffle_rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

long long Trainer::train(const std::vector<EncodedExample>& examples,
                         const std::vector<WeakSupportLabels>* weak,
                         const fs::path& checkpoint_dir, std::ostream* log,
                         long long start_step) {
  if (examples.empty()) throw DataError("train: no examples");
  const AblationFlags flags{config_.disable_rps, config_.disable_sti,
                            config_.plain_pointer};
  const bool needs_weak =
      !config_.disable_sti &&
      std::any_of(examples.begin(), examples.end(), [](const auto& ex) {
        return ex.response_ids.size() >= 2;
      });
  if (needs_weak && (weak == nullptr || weak->size() != examples.size())) {
    throw std::invalid_argument(
        "train: weak labels must align with the examples");
  }
  if (start_step < 0 || start_step >= config_.total_steps) {
    throw std::invalid_argument("train: start step out of range");
  }

  ParamStore& store = model_.params();
  if (start_step == 0) store.init_ema();

  auto check_finite = [](double x, const char* what, long long step) {
    if (!std::isfinite(x)) {
      throw RuntimeFailure(std::string(what) + " became non-finite at step " +
                           std::to_string(step));
    }
  };

  for (long long step = start_step + 1; step <= config_.total_steps; ++step) {
    store.zero_grads();
    const auto batch = next_batch(examples.size());

    double loss_sum = 0.0;
    double rps_sum = 0.0, sti_sum = 0.0, rg_sum = 0.0;
    int rps_n = 0, sti_n = 0, rg_n = 0;
    for (std::size_t idx : batch) {
      const EncodedExample& ex = examples[idx];
      const WeakSupportLabels* labels =
          weak != nullptr && ex.response_ids.size() >= 2 ? &(*weak)[idx]
                                                         : nullptr;
      // Setup problems were rejected above; anything the graph throws here
      // (e.g. a softmax fed non-finite values) is numeric corruption.
      try {
        ag::Graph g(true);
        ModelOutput out = model_.forward(g, ex, labels, flags);

        ag::Var combined;
        auto mix = [&](const ag::Var& term, double lambda) {
          ag::Var scaled = ag::scale(term, lambda);
          combined = combined.valid() ? ag::add(combined, scaled) : scaled;
        };
        if (out.l_rps.valid()) {
          const double v = out.l_rps.value()(0, 0);
          check_finite(v, "passage selection loss", step);
          rps_sum += v;
          ++rps_n;
          mix(out.l_rps, config_.lambda_rps);
        }
        if (out.l_sti.valid()) {
          const double v = out.l_sti.value()(0, 0);
          check_finite(v, "supporting token loss", step);
          sti_sum += v;
          ++sti_n;
          mix(out.l_sti, config_.lambda_sti);
        }
        if (out.l_rg.valid()) {
          const double v = out.l_rg.value()(0, 0);
          check_finite(v, "response generation loss", step);
          rg_sum += v;
          ++rg_n;
          mix(out.l_rg, config_.lambda_rg);
        }
        if (!combined.valid()) continue;
        ag::Var contribution = ag::scale(
            combined, 1.0 / static_cast<double>(config_.batch_size));
        loss_sum += combined.value()(0, 0);
        g.backward(contribution);
      } catch (const RuntimeFailure&) {
        throw;
      } catch (const std::exception& e) {
        throw RuntimeFailure("example " + ex.conversation_id +
                             " failed at step " + std::to_string(step) + ": " +
                             e.what());
      }
    }

    const double pre_clip = store.clip_grad_norm(config_.clip_norm);
    check_finite(pre_clip, "gradient norm", step);

    StepRecord rec;
    rec.step = step;
    rec.lr = lr_schedule(step, config_.peak_lr, config_.warmup_steps,
                         config_.total_steps);
    rec.loss = loss_sum / static_cast<double>(config_.batch_size);
    if (!config_.disable_rps) {
      rec.l_rps = rps_n > 0 ? rps_sum / rps_n : 0.0;
    }
    if (!config_.disable_sti) {
      rec.l_sti = sti_n > 0 ? sti_sum / sti_n : 0.0;
    }
    rec.l_rg = rg_n > 0 ? rg_sum / rg_n : 0.0;
    rec.grad_norm = store.grad_norm();

    adam_step(store, rec.lr, config_.beta1, config_.beta2, config_.adam_eps,
              step);
    store.ema_update(config_.ema_decay);
    history_.push_back(rec);

    const bool last = step == config_.total_steps;
    if (log != nullptr &&
        (last || config_.log_every <= 0 || step % config_.log_every == 0)) {
      (*log) << rec.to_json().dump() << "\n";
    }
    if (!checkpoint_dir.empty() &&
        (last || (config_.checkpoint_every > 0 &&
                  step % config_.checkpoint_every == 0))) {
      save_checkpoint(checkpoint_dir, model_.config(), config_, vocab_, store,
                      step);
    }
  }
  return config_.total_steps;
}

}  // namespace cse

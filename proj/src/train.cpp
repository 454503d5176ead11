#include "wwh/train.hpp"

#include <cmath>
#include <numeric>
#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace wwh {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (weight_decay < 0 || grad_clip < 0) throw ConfigError("weight_decay and grad_clip must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must be in [0, 1)");
  if (schedule != "constant" && schedule != "cosine") throw ConfigError("schedule must be constant or cosine");
}

double TrainConfig::lr_at(std::size_t step, std::size_t total) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (schedule == "constant" || total <= warmup_steps + 1) return lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total - warmup_steps - 1);
  const double floor = lr * min_lr_ratio;
  return floor + (lr - floor) * 0.5 * (1 + std::cos(M_PI * std::min(progress, 1.0)));
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"warmup_steps", c.warmup_steps},
          {"schedule", c.schedule},
          {"min_lr_ratio", c.min_lr_ratio},
          {"max_steps", c.max_steps},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.schedule = j.value("schedule", c.schedule);
  c.min_lr_ratio = j.value("min_lr_ratio", c.min_lr_ratio);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.seed = j.value("seed", c.seed);
  return c;
}

TrainResult train(const std::vector<TrainingInstance>& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::function<void(const StepLog&)>& on_step, const std::vector<double>* init) {
  cfg.validate();
  if (data.empty()) throw Error("training set is empty");
#ifdef __GLIBC__
  // Activation buffers exceed the default mmap threshold; recycling them
  // through the heap avoids a page-fault storm every step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  Transformer<float> model = init ? Transformer<float>(model_cfg, *init) : Transformer<float>(model_cfg);
  AdamW<float> opt(model.layout(), cfg);
  auto& w = model.parameters();
  std::vector<float> grad(w.size());

  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  TrainResult res;
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs && step < total; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (epoch > 0) Rng(derive_seed(cfg.seed, 0xe90c + epoch)).shuffle(order);
    for (std::size_t b = 0; b < per_epoch && step < total; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, data.size());
      std::size_t count = 0;
      for (std::size_t i = lo; i < hi; ++i) count += data[order[i]].masked_count();
      if (count == 0) continue;
      std::fill(grad.begin(), grad.end(), 0.0f);
      const float scale = 1.0f / static_cast<float>(count);
      std::vector<Transformer<float>::SeqRef> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back({data[order[i]].input_ids, &data[order[i]].loss_mask});
      Rng drop(derive_seed(cfg.seed, 0xd50f + step));
      const double nll = model.forward_backward(batch, scale, &grad, &drop).nll_sum;
      StepLog log{step, epoch, nll / static_cast<double>(count), cfg.lr_at(step, total), 0};
      if (!std::isfinite(log.loss)) {
        throw Error("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                    ", lr " + std::to_string(log.lr) + ")");
      }
      double sq = 0;
      for (float g : grad) sq += static_cast<double>(g) * g;
      log.grad_norm = std::sqrt(sq);
      if (!std::isfinite(log.grad_norm)) throw Error("non-finite gradient at step " + std::to_string(step));
      if (cfg.grad_clip > 0 && log.grad_norm > cfg.grad_clip) {
        const float s = static_cast<float>(cfg.grad_clip / log.grad_norm);
        for (float& g : grad) g *= s;
      }
      if (log.lr > 0) opt.step(w, grad, log.lr);
      res.log.push_back(log);
      if (on_step) on_step(log);
    }
  }
  res.steps = step;
  res.params = model.parameters_as_double();
  return res;
}

}  // namespace wwh

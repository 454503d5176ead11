#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wwh/model.hpp"
#include "wwh/serialize.hpp"

namespace wwh {

struct TrainConfig {
  double lr = 3e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::size_t warmup_steps = 0;
  std::string schedule = "constant";  // constant | cosine
  double min_lr_ratio = 0.1;          // cosine floor as a fraction of lr
  std::size_t max_steps = 0;          // 0 = run every epoch to completion
  std::uint64_t seed = 1;

  void validate() const;
  /// Learning rate for a 0-based step out of `total` steps.
  double lr_at(std::size_t step, std::size_t total) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// AdamW with decoupled weight decay restricted to the layout's 2-D weights.
template <typename T>
class AdamW {
 public:
  AdamW(const ParamLayout& layout, const TrainConfig& cfg) : cfg_(cfg) {
    decay_.assign(layout.total, 0);
    for (auto [b, e] : layout.decayed) std::fill(decay_.begin() + static_cast<std::ptrdiff_t>(b),
                                                 decay_.begin() + static_cast<std::ptrdiff_t>(e), 1);
    m_.assign(layout.total, T(0));
    v_.assign(layout.total, T(0));
  }

  void step(std::vector<T>& w, const std::vector<T>& g, double lr) {
    ++t_;
    const double bc1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T rbc2 = static_cast<T>(1 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = static_cast<T>(lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * g[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * g[i] * g[i];
      if (decay_[i]) w[i] -= decay * w[i];
      w[i] -= step_size * m_[i] / (std::sqrt(v_[i]) * rbc2 + eps);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<unsigned char> decay_;
  std::vector<T> m_, v_;
  std::size_t t_ = 0;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;  // mean masked NLL of the batch
  double lr = 0;
  double grad_norm = 0;  // before clipping
};

struct TrainResult {
  std::vector<double> params;
  std::size_t steps = 0;
  std::vector<StepLog> log;
};

/// Mini-batch training in single precision. Epoch 0 visits instances in file
/// order (the blend manifest's shuffle); later epochs use a seeded
/// permutation. Throws Error on a non-finite loss. `init` overrides the
/// seeded initialization.
TrainResult train(const std::vector<TrainingInstance>& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::function<void(const StepLog&)>& on_step = {},
                  const std::vector<double>* init = nullptr);

/// Token-level mean NLL and count over a set, through the training forward.
template <typename T>
std::pair<double, std::size_t> mean_nll(const Transformer<T>& model, const std::vector<TrainingInstance>& data) {
  double sum = 0;
  std::size_t count = 0;
  for (const auto& x : data) {
    auto r = model.forward_backward(x.input_ids, x.loss_mask, T(0), nullptr, nullptr);
    sum += r.nll_sum;
    count += r.count;
  }
  if (count == 0) throw Error("no target tokens");
  return {sum / static_cast<double>(count), count};
}

}  // namespace wwh

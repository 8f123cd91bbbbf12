#include "casif/trainer.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <omp.h>

#include "casif/error.hpp"
#include "casif/kernels.hpp"
#include "casif/rng.hpp"

namespace casif {

void TrainConfig::validate() const {
  hp.validate();
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) {
    throw ConfigError("lr0 must be positive");
  }
  if (!(lr_decay_factor > 0.0) || lr_decay_factor > 1.0) {
    throw ConfigError("lr_decay_factor must lie in (0, 1]");
  }
  if (!(l2_lambda >= 0.0) || !std::isfinite(l2_lambda)) {
    throw ConfigError("l2_lambda must be non-negative");
  }
  if (epochs < 1) {
    throw ConfigError("epochs must be at least 1");
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t num_examples, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch) {
  if (num_examples == 0) {
    throw ArgumentError("make_batches: no examples");
  }
  if (batch_size == 0) {
    throw ArgumentError("make_batches: batch_size must be positive");
  }
  std::vector<std::size_t> order(num_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, Stream::kShuffle, epoch);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < num_examples; begin += batch_size) {
    const auto end = std::min(num_examples, begin + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

double lr_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.lr_decay_every == 0) {
    return cfg.lr0;
  }
  double lr = cfg.lr0;
  for (std::size_t i = 0; i < epoch / cfg.lr_decay_every; ++i) {
    lr *= cfg.lr_decay_factor;
  }
  return lr;
}

AdamState AdamState::zeros_like(const ParamSet& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr) {
  if (!params.same_shape(grads) || !params.same_shape(state.first) ||
      !params.same_shape(state.second)) {
    throw ArgumentError("adam_step: shape mismatch");
  }
  for (std::size_t p = 0; p < kNumParams; ++p) {
    const auto g = grads.at(p).flat();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g[k])) {
        const auto cols = grads.at(p).cols();
        throw NumericError(fmt::format("non-finite gradient {} in {}[{}, {}]", g[k],
                                       param_name(static_cast<Param>(p)), k / cols, k % cols));
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double correction2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t p = 0; p < kNumParams; ++p) {
    auto theta = params.at(p).flat();
    const auto g = grads.at(p).flat();
    auto m = state.first.at(p).flat();
    auto v = state.second.at(p).flat();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * g[k];
      v[k] = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"lr", lr}, {"mean_loss", mean_loss}};
  if (!validation.is_null()) {
    j["validation"] = validation;
  }
  return j;
}

TrainState init_train_state(std::size_t num_items, const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.params = init_params(num_items, cfg.hp, cfg.seed);
  state.adam = AdamState::zeros_like(state.params);
  state.seed = cfg.seed;
  return state;
}

std::vector<EpochLog> train_epochs(std::span<const PrefixExample> examples, const TrainConfig& cfg,
                                   TrainState& state, const EpochHook& hook) {
  cfg.validate();
  if (examples.empty()) {
    throw DataError("training split is empty");
  }
  if (state.params.dim() != cfg.hp.dim || state.params.variant() != cfg.hp.variant) {
    throw ConfigError("training state does not match the configured hyperparameters");
  }
  const bool parallel = omp_get_max_threads() > 1;
  std::vector<EpochLog> logs;
  std::vector<PrefixExample> batch;
  for (std::size_t epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_for_epoch(cfg, epoch);
    const auto batches = make_batches(examples.size(), cfg.batch_size, state.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      batch.clear();
      for (const auto idx : batches[b]) {
        batch.push_back(examples[idx]);
      }
      BatchGradient bg = parallel ? batch_gradient_parallel(batch, state.params, cfg.hp)
                                  : batch_gradient_serial(batch, state.params, cfg.hp);
      const double inv = 1.0 / static_cast<double>(batch.size());
      const double objective = bg.loss_sum * inv + l2_penalty(state.params, cfg.l2_lambda);
      if (!std::isfinite(objective)) {
        throw NumericError(fmt::format("non-finite loss in epoch {} batch {}", epoch, b));
      }
      for (std::size_t p = 0; p < kNumParams; ++p) {
        for (double& g : bg.grad.at(p).flat()) {
          g *= inv;
        }
      }
      add_l2_gradient(state.params, cfg.l2_lambda, bg.grad);
      adam_step(state.params, bg.grad, state.adam, lr);
      loss_sum += bg.loss_sum;
    }
    EpochLog log{epoch, lr, loss_sum / static_cast<double>(examples.size()), nullptr};
    state.next_epoch = epoch + 1;
    if (hook) {
      hook(log, state.params);
    }
    logs.push_back(std::move(log));
  }
  return logs;
}

TrainResult train(const ProcessedDataset& dataset, const TrainConfig& cfg, const EpochHook& hook) {
  TrainResult result{init_train_state(dataset.num_items(), cfg), {}};
  result.log = train_epochs(dataset.train, cfg, result.state, hook);
  return result;
}

}  // namespace casif

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "casif/corpus.hpp"
#include "casif/model.hpp"

namespace casif {

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr0 = 0.001;
  double lr_decay_factor = 0.1;
  /// Epochs between learning-rate decays; 0 disables decay.
  std::size_t lr_decay_every = 3;
  double l2_lambda = 1e-5;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  HyperParams hp;

  /// Throws ConfigError.
  void validate() const;
};

/// Indices of the examples in each batch for one epoch: a Fisher-Yates
/// permutation drawn from the shuffle stream keyed on (seed, epoch), cut
/// into consecutive chunks. The final short batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t num_examples, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch);

/// lr0 * decay^floor(epoch / decay_every), epoch 0-based.
double lr_for_epoch(const TrainConfig& cfg, std::size_t epoch);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  ParamSet first;
  ParamSet second;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Throws NumericError naming the parameter
/// and coordinate of the first non-finite gradient entry, before any update.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  nlohmann::json validation;  // null unless a validation hook filled it

  nlohmann::json to_json() const;
};

/// Everything needed to continue training exactly where it stopped.
struct TrainState {
  ParamSet params;
  AdamState adam;
  std::size_t next_epoch = 0;
  std::uint64_t seed = 0;
};

TrainState init_train_state(std::size_t num_items, const TrainConfig& cfg);

/// Called after every epoch; may fill log.validation.
using EpochHook = std::function<void(EpochLog& log, const ParamSet& params)>;

/// Runs epochs state.next_epoch .. cfg.epochs - 1 over the examples. Per
/// batch the objective is the mean example loss plus l2_lambda * sum of
/// squared parameters. Throws NumericError naming the batch on a non-finite loss.
std::vector<EpochLog> train_epochs(std::span<const PrefixExample> examples, const TrainConfig& cfg,
                                   TrainState& state, const EpochHook& hook = {});

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> log;
};

TrainResult train(const ProcessedDataset& dataset, const TrainConfig& cfg, const EpochHook& hook = {});

}  // namespace casif

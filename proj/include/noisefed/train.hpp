#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "noisefed/dataset.hpp"
#include "noisefed/model.hpp"
#include "noisefed/noise.hpp"

namespace noisefed {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  /// Global index of the first epoch. Shuffles and per-step streams key off
  /// the global epoch/step, so training in segments replays one long run.
  std::size_t epoch_offset = 0;

  void validate() const;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

struct EpochRecord {
  double train_acc = 0.0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  std::vector<EpochRecord> per_epoch;
  EvalResult test;
  Mechanism mechanism = Mechanism::kNone;
  double sigma = 0.0;
  std::uint64_t noise_seed = 0;
  std::uint64_t train_seed = 0;

  std::vector<double> val_accuracies() const;
  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

/// Accuracy of argmax(logits) against `labels` and mean cross-entropy.
EvalResult score_logits(const Tensor& logits, std::span<const int> labels);

/// Eval-mode accuracy and loss over `rows`. Throws on an empty row list.
EvalResult evaluate(Model& model, const Dataset& data,
                    std::span<const std::size_t> rows,
                    std::size_t batch_size = 256);

/// v <- momentum * v + g; w <- w - lr * v, trainable parameters only.
void sgd_step(Model& model, const Gradients& grads, const TrainConfig& config);

/// Called after every epoch with the global epoch index and the epoch's
/// running train accuracy/loss.
using EpochHook = std::function<void(std::size_t epoch, const EvalResult& train)>;

/// Shuffled mini-batch SGD over `rows` for config.epochs epochs with the
/// noise plan applied. Returns per-epoch train accuracy/loss (accuracy
/// against the true labels, loss against the training targets).
std::vector<EvalResult> fit(Model& model, const Dataset& data,
                            std::span<const std::size_t> rows,
                            const TrainConfig& config, const NoisePlan& plan,
                            const EpochHook& hook = {});

/// fit() on the train split with validation after every epoch and a final
/// test evaluation.
TrainReport train(Model& model, const Dataset& data, const TrainConfig& config,
                  const NoisePlan& plan);

std::string report_to_json(const TrainReport& report);
/// epoch,train_acc,train_loss,val_acc,val_loss
std::string report_to_csv(const TrainReport& report);

}  // namespace noisefed

#pragma once

#include "petbench/data.hpp"
#include "petbench/eval.hpp"
#include "petbench/models/model.hpp"
#include "petbench/optim.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace petbench {

/// The shared training protocol: AdamW, a per-step lr schedule, global-norm
/// clipping and optional early stopping on validation loss.
struct TrainConfig {
  int epochs = 5;
  Index batch_size = 128;
  Index eval_batch_size = 1000;
  std::uint64_t seed = 42;
  AdamWConfig adamw;
  ScheduleConfig schedule;
  double clip_norm = 1.0;  // <= 0 turns clipping off
  bool early_stopping = false;
  int patience = 10;
  double min_delta = 1e-4;
  // With early stopping on, the best-validation weights are put back before
  // returning.
  bool restore_best = true;
};

/// Per-family adjustments on top of the shared protocol (Transformer warm-up
/// length).
TrainConfig protocol_for(ModelKind kind, TrainConfig base);

struct EpochLog {
  int epoch = 0;    // 1-based
  Index step = 0;   // optimizer steps taken so far
  double lr = 0.0;  // lr of the last step in the epoch
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

inline constexpr const char* kEpochLogHeader = "epoch,step,lr,train_loss,val_loss,val_acc";
std::string format_epoch_log(const EpochLog& log);

class TrainingError : public std::runtime_error {
 public:
  TrainingError(int epoch, Index step, const std::string& what);
  int epoch() const { return epoch_; }
  Index step() const { return step_; }

 private:
  int epoch_;
  Index step_;
};

template <typename S>
struct TrainResult {
  std::vector<EpochLog> history;
  int epochs_run = 0;
  int best_epoch = 0;  // 0 when no epoch ran
  std::vector<Array<S>> best_values;  // parameter values at best_epoch
};

/// Mean cross-entropy, confusion matrix and accuracy in eval mode.
struct EvalResult {
  ConfusionMatrix confusion;
  double loss = 0.0;
  double accuracy = 0.0;
};

template <typename S>
EvalResult evaluate(const Model<S>& model, const Dataset& data, Index batch_size = 1000);

/// Trains in place. `on_epoch` sees each log entry as soon as it exists.
/// Throws TrainingError (epoch and step attached) when a loss or gradient
/// turns non-finite, and std::invalid_argument for a bad config or an empty
/// validation set.
template <typename S>
TrainResult<S> train(Model<S>& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& config,
                     const std::function<void(const EpochLog&)>& on_epoch = {});

template <typename S>
std::vector<Array<S>> snapshot(const Parameters<S>& params);
template <typename S>
void restore(const Parameters<S>& params, const std::vector<Array<S>>& values);

}  // namespace petbench

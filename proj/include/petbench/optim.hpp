#pragma once

#include "petbench/layers.hpp"

#include <limits>
#include <span>
#include <vector>

namespace petbench {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename S>
struct AdamWState {
  AdamWConfig config;
  Index step = 0;
  std::vector<Array<S>> m;  // first moments, shaped like the parameters
  std::vector<Array<S>> v;  // second moments

  static AdamWState create(const Parameters<S>& params, AdamWConfig config = {});
};

/// One AdamW update using `grads[i]` for `params[i]`: weights first shrink by
/// (1 - lr * weight_decay), then take the bias-corrected Adam step. Throws
/// NumericError naming the first parameter with a non-finite gradient, before
/// touching anything.
template <typename S>
void adamw_step(AdamWState<S>& state, const Parameters<S>& params, std::span<const Array<S>> grads);
/// Same, reading each parameter's accumulated gradient (zero when it has none).
template <typename S>
void adamw_step(AdamWState<S>& state, const Parameters<S>& params);

enum class ScheduleKind { one_cycle, exponential, constant };

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::one_cycle;
  double max_lr = 5e-4;
  double pct_start = 0.3;
  double div_factor = 25.0;         // initial lr = max_lr / div_factor
  double final_div_factor = 1e4;    // final lr = initial lr / final_div_factor
  double gamma = 0.96;              // exponential: per-epoch decay
};

/// Cosine one-cycle: rises from max_lr / div_factor to max_lr at the peak
/// step, then anneals to the final lr at the last step. Exponential decays
/// max_lr by gamma once per epoch; constant returns max_lr.
class LrSchedule {
 public:
  LrSchedule(ScheduleConfig config, Index total_steps, Index steps_per_epoch = 1);

  /// Throws std::out_of_range unless 0 <= step < total_steps.
  double at(Index step) const;
  Index total_steps() const { return total_; }
  Index peak_step() const { return peak_; }
  const ScheduleConfig& config() const { return config_; }

 private:
  ScheduleConfig config_;
  Index total_;
  Index per_epoch_;
  Index peak_;
};

/// OneCycle learning rate at `step` of `total_steps`.
double onecycle_lr_at(const ScheduleConfig& config, Index total_steps, Index step);

/// Scales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm (up to a few ulps of slack). Null entries are skipped. Returns g
/// (before scaling).
template <typename S>
double clip_grad_global_norm(std::span<Array<S>* const> grads, double max_norm = 1.0);
/// Clips the accumulated gradients of `params`.
template <typename S>
double clip_grad_global_norm(const Parameters<S>& params, double max_norm = 1.0);

enum class EarlyStop { keep_going, stop };

struct EarlyStopping {
  int patience = 10;
  double min_delta = 1e-4;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale_epochs = 0;
  int epochs_seen = 0;

  /// A loss counts as an improvement only when below best - min_delta.
  EarlyStop update(double val_loss);
  bool improved_last() const { return stale_epochs == 0; }
};

}  // namespace petbench

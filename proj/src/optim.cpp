#include "petbench/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace petbench {

template <typename S>
AdamWState<S> AdamWState<S>::create(const Parameters<S>& params, AdamWConfig config) {
  AdamWState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.push_back(Array<S>::Zero(p.tensor.size()));
    s.v.push_back(Array<S>::Zero(p.tensor.size()));
  }
  return s;
}

template <typename S>
void adamw_step(AdamWState<S>& state, const Parameters<S>& params, std::span<const Array<S>> grads) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adamw_step: " + std::to_string(params.size()) + " parameters, " +
                                std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                                " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].tensor.size()) {
      throw ShapeError("gradient for " + params[i].name + " has " + std::to_string(grads[i].size()) + " values");
    }
    if (!grads[i].allFinite()) throw NumericError("non-finite gradient for parameter " + params[i].name);
  }
  const AdamWConfig& c = state.config;
  ++state.step;
  const S lr = static_cast<S>(c.lr);
  const S b1 = static_cast<S>(c.beta1);
  const S b2 = static_cast<S>(c.beta2);
  const S eps = static_cast<S>(c.eps);
  const S decay = static_cast<S>(1.0 - c.lr * c.weight_decay);
  const S bc1 = static_cast<S>(1.0 - std::pow(c.beta1, static_cast<double>(state.step)));
  const S bc2_sqrt = static_cast<S>(std::sqrt(1.0 - std::pow(c.beta2, static_cast<double>(state.step))));
  const S step_size = lr / bc1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S> t = params[i].tensor;
    Array<S>& w = t.mutable_value();
    const Array<S>& g = grads[i];
    if (c.weight_decay != 0.0) w *= decay;
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g.square();
    w -= step_size * state.m[i] / (state.v[i].sqrt() / bc2_sqrt + eps);
  }
}

template <typename S>
void adamw_step(AdamWState<S>& state, const Parameters<S>& params) {
  std::vector<Array<S>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    grads.push_back(p.tensor.has_grad() ? p.tensor.grad() : Array<S>::Zero(p.tensor.size()));
  }
  adamw_step(state, params, std::span<const Array<S>>(grads));
}

LrSchedule::LrSchedule(ScheduleConfig config, Index total_steps, Index steps_per_epoch)
    : config_(config), total_(total_steps), per_epoch_(steps_per_epoch) {
  if (total_ < 1) throw std::invalid_argument("schedule needs at least one step");
  if (per_epoch_ < 1) throw std::invalid_argument("steps_per_epoch must be positive");
  if (!(config_.max_lr > 0)) throw std::invalid_argument("max_lr must be positive");
  if (!(config_.pct_start > 0 && config_.pct_start <= 1)) throw std::invalid_argument("pct_start must lie in (0, 1]");
  if (!(config_.div_factor >= 1) || !(config_.final_div_factor >= 1)) {
    throw std::invalid_argument("div factors must be >= 1");
  }
  if (!(config_.gamma > 0 && config_.gamma <= 1)) throw std::invalid_argument("gamma must lie in (0, 1]");
  // The peak sits on a whole step so that max_lr is actually reached.
  peak_ = static_cast<Index>(std::floor(config_.pct_start * static_cast<double>(total_))) - 1;
  peak_ = std::clamp<Index>(peak_, 0, total_ - 1);
}

namespace {

double cosine(double from, double to, double pct) {
  return to + (from - to) / 2.0 * (std::cos(std::numbers::pi * pct) + 1.0);
}

}  // namespace

double LrSchedule::at(Index step) const {
  if (step < 0 || step >= total_) {
    throw std::out_of_range("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total_) + ")");
  }
  switch (config_.kind) {
    case ScheduleKind::constant:
      return config_.max_lr;
    case ScheduleKind::exponential:
      return config_.max_lr * std::pow(config_.gamma, static_cast<double>(step / per_epoch_));
    case ScheduleKind::one_cycle:
      break;
  }
  const double initial = config_.max_lr / config_.div_factor;
  const double final_lr = initial / config_.final_div_factor;
  if (step == peak_) return config_.max_lr;
  if (step < peak_) return cosine(initial, config_.max_lr, static_cast<double>(step) / static_cast<double>(peak_));
  return cosine(config_.max_lr, final_lr,
                static_cast<double>(step - peak_) / static_cast<double>(total_ - 1 - peak_));
}

double onecycle_lr_at(const ScheduleConfig& config, Index total_steps, Index step) {
  ScheduleConfig c = config;
  c.kind = ScheduleKind::one_cycle;
  return LrSchedule(c, total_steps).at(step);
}

template <typename S>
double clip_grad_global_norm(std::span<Array<S>* const> grads, double max_norm) {
  double total = 0.0;
  for (const Array<S>* g : grads) {
    if (g) total += g->template cast<double>().square().sum();
  }
  const double norm = std::sqrt(total);
  // Rescaled gradients land within rounding of max_norm; the slack keeps a
  // second clip from touching them again.
  const double slack = 64.0 * std::numeric_limits<S>::epsilon();
  if (norm > max_norm * (1.0 + slack)) {
    const S factor = static_cast<S>(max_norm / norm);
    for (Array<S>* g : grads) {
      if (g) *g *= factor;
    }
  }
  return norm;
}

template <typename S>
double clip_grad_global_norm(const Parameters<S>& params, double max_norm) {
  std::vector<Array<S>*> grads;
  for (const auto& p : params) {
    Tensor<S> t = p.tensor;
    grads.push_back(t.has_grad() ? &t.mutable_grad() : nullptr);
  }
  return clip_grad_global_norm(std::span<Array<S>* const>(grads), max_norm);
}

EarlyStop EarlyStopping::update(double val_loss) {
  ++epochs_seen;
  if (val_loss < best - min_delta) {
    best = val_loss;
    best_epoch = epochs_seen;
    stale_epochs = 0;
  } else {
    ++stale_epochs;
  }
  return stale_epochs >= patience ? EarlyStop::stop : EarlyStop::keep_going;
}

#define PETBENCH_INSTANTIATE(S)                                                                   \
  template struct AdamWState<S>;                                                                  \
  template void adamw_step(AdamWState<S>&, const Parameters<S>&, std::span<const Array<S>>);      \
  template void adamw_step(AdamWState<S>&, const Parameters<S>&);                                 \
  template double clip_grad_global_norm(std::span<Array<S>* const>, double);                      \
  template double clip_grad_global_norm(const Parameters<S>&, double);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

#include "petbench/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace petbench {

std::string format_epoch_log(const EpochLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.6e,%.6f,%.6f,%.4f", log.epoch, static_cast<long long>(log.step), log.lr,
                log.train_loss, log.val_loss, log.val_acc);
  return buf;
}

TrainingError::TrainingError(int epoch, Index step, const std::string& what)
    : std::runtime_error("epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ": " + what),
      epoch_(epoch),
      step_(step) {}

template <typename S>
std::vector<Array<S>> snapshot(const Parameters<S>& params) {
  std::vector<Array<S>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.value());
  return out;
}

template <typename S>
void restore(const Parameters<S>& params, const std::vector<Array<S>>& values) {
  if (values.size() != params.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].tensor.size()) {
      throw std::invalid_argument("restore: size mismatch for " + params[i].name);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S> t = params[i].tensor;
    t.mutable_value() = values[i];
  }
}

template <typename S>
EvalResult evaluate(const Model<S>& model, const Dataset& data, Index batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate on an empty dataset");
  if (batch_size < 1) throw std::invalid_argument("eval batch size must be positive");
  NoGradGuard no_grad;
  EvalResult r;
  double loss_sum = 0.0;
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index end = std::min(data.size(), start + batch_size);
    idx.clear();
    for (Index i = start; i < end; ++i) idx.push_back(i);
    Tensor<S> x = normalize<S>(data, idx);
    std::vector<int> y = labels_of(data, idx);
    ForwardContext<S> ctx;
    Tensor<S> logits = model.forward(x, ctx);
    loss_sum += static_cast<double>(softmax_cross_entropy(logits, y).item()) * static_cast<double>(end - start);
    std::vector<int> pred = decode_one_hot(logits);
    accumulate_confusion(r.confusion, y, pred);
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  r.accuracy = static_cast<double>(r.confusion.trace()) / static_cast<double>(r.confusion.total());
  return r;
}

namespace {

void check_config(const TrainConfig& c) {
  if (c.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (c.eval_batch_size < 1) throw std::invalid_argument("eval_batch_size must be positive");
  if (c.patience < 1) throw std::invalid_argument("patience must be >= 1");
}

}  // namespace

template <typename S>
TrainResult<S> train(Model<S>& model, const Dataset& train_data, const Dataset& val_data, const TrainConfig& config,
                     const std::function<void(const EpochLog&)>& on_epoch) {
  check_config(config);
  TrainResult<S> result;
  if (config.epochs == 0) return result;
  if (train_data.size() == 0) throw std::invalid_argument("empty training set");
  if (val_data.size() == 0) throw std::invalid_argument("empty validation set");

  const Parameters<S>& params = model.parameters();
  const Index per_epoch = (train_data.size() + config.batch_size - 1) / config.batch_size;
  const LrSchedule schedule(config.schedule, per_epoch * config.epochs, per_epoch);
  AdamWState<S> opt = AdamWState<S>::create(params, config.adamw);
  EarlyStopping stopper{config.patience, config.min_delta};
  BatchPlan plan{config.batch_size, config.seed, true};
  // Dropout and sampler noise get their own stream, apart from shuffling.
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0x7261u};
  std::mt19937_64 rng(seq);

  Index step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    double lr = 0.0;
    for (const auto& batch : shuffled_batches(train_data.size(), plan, epoch)) {
      Tensor<S> x = normalize<S>(train_data, batch);
      std::vector<int> y = labels_of(train_data, batch);
      ForwardContext<S> ctx;
      ctx.training = true;
      ctx.rng = &rng;
      model.zero_grad();
      try {
        Tensor<S> loss = model.loss(x, y, ctx);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        backward(loss);
        if (config.clip_norm > 0) clip_grad_global_norm(params, config.clip_norm);
        lr = schedule.at(step);
        opt.config.lr = lr;
        adamw_step(opt, params);
        loss_sum += value * static_cast<double>(batch.size());
      } catch (const NumericError& e) {
        throw TrainingError(epoch, step, std::string(name(model.kind())) + ": " + e.what());
      }
      ++step;
    }
    model.zero_grad();

    EvalResult val;
    try {
      val = evaluate(model, val_data, config.eval_batch_size);
    } catch (const NumericError& e) {
      throw TrainingError(epoch, step, std::string(name(model.kind())) + " validation: " + e.what());
    }
    EpochLog log{epoch, step, lr, loss_sum / static_cast<double>(train_data.size()), val.loss, val.accuracy};
    result.history.push_back(log);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(log);

    const EarlyStop verdict = stopper.update(val.loss);
    if (stopper.improved_last()) {
      result.best_epoch = epoch;
      result.best_values = snapshot(params);
    }
    if (config.early_stopping && verdict == EarlyStop::stop) break;
  }
  if (config.early_stopping && config.restore_best && !result.best_values.empty()) restore(params, result.best_values);
  return result;
}

TrainConfig protocol_for(ModelKind kind, TrainConfig base) {
  if (kind == ModelKind::transformer && base.epochs > 0 && base.schedule.kind == ScheduleKind::one_cycle) {
    // Attention layers want about five epochs of warm-up; never stretch the
    // rise past the shared pct_start.
    base.schedule.pct_start = std::min(base.schedule.pct_start, 5.0 / base.epochs);
  }
  return base;
}

#define PETBENCH_INSTANTIATE(S)                                                                                    \
  template std::vector<Array<S>> snapshot(const Parameters<S>&);                                                  \
  template void restore(const Parameters<S>&, const std::vector<Array<S>>&);                                      \
  template EvalResult evaluate(const Model<S>&, const Dataset&, Index);                                           \
  template TrainResult<S> train(Model<S>&, const Dataset&, const Dataset&, const TrainConfig&,                    \
                                const std::function<void(const EpochLog&)>&);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

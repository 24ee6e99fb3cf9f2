#include "petbench/models/jem.hpp"

namespace petbench {

template <typename S>
Tensor<S> energy_from_logits(const Tensor<S>& logits) {
  return neg(logsumexp_last(logits));
}

template <typename S>
Tensor<S> jem_marginal_energy(const Model<S>& model, const Tensor<S>& x, ForwardContext<S>& ctx) {
  return energy_from_logits(model.forward(x, ctx));
}

template <typename S>
Tensor<S> sgld_sample(const Model<S>& model, const JemConfig& cfg, std::mt19937_64& rng, const Shape& shape,
                      SgldStats* stats, const Tensor<S>* init) {
  if (cfg.langevin_steps < 1) throw std::invalid_argument("langevin_steps must be >= 1");
  if (cfg.noise_scale < 0) throw std::invalid_argument("noise_scale must be >= 0");
  Array<S> x;
  if (init) {
    if (init->shape() != shape) throw ShapeError("sgld init shape " + to_string(init->shape()) + " != " + to_string(shape));
    x = init->value();
  } else {
    std::uniform_real_distribution<double> uniform(cfg.pixel_lo, cfg.pixel_hi);
    x.resize(numel(shape));
    for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<S>(uniform(rng));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  ForwardContext<S> eval;
  const S drift = static_cast<S>(cfg.step_size / 2);
  for (int step = 0; step < cfg.langevin_steps; ++step) {
    Tensor<S> xt = Tensor<S>::from(shape, x, true);
    Tensor<S> energy;
    try {
      // Samples are independent, so the gradient of the sum is per-sample.
      energy = sum(jem_marginal_energy(model, xt, eval));
    } catch (const NumericError& e) {
      throw SamplerError(std::string("non-finite energy at Langevin step ") + std::to_string(step) + ": " + e.what());
    }
    auto grad = gradients(energy, std::span<const Tensor<S>>(&xt, 1));
    if (stats) ++stats->gradient_evaluations;
    if (!grad[0].allFinite()) throw SamplerError("non-finite energy gradient at Langevin step " + std::to_string(step));
    x -= drift * grad[0];
    if (cfg.noise_scale > 0) {
      for (Index i = 0; i < x.size(); ++i) x[i] += static_cast<S>(cfg.noise_scale * normal(rng));
    }
    x = x.max(static_cast<S>(cfg.pixel_lo)).min(static_cast<S>(cfg.pixel_hi));
  }
  if (stats) ++stats->batches;
  return Tensor<S>::from(shape, std::move(x));
}

template <typename S>
Tensor<S> jem_loss_with_negatives(const Model<S>& model, const Tensor<S>& x, std::span<const int> labels,
                                  const Tensor<S>& negatives, double lambda, ForwardContext<S>& ctx) {
  Tensor<S> logits = model.forward(x, ctx);
  Tensor<S> ce = cross_entropy(logits, labels);
  if (lambda == 0.0) return ce;
  Tensor<S> gap = sub(mean(energy_from_logits(logits)), mean(jem_marginal_energy(model, negatives.detach(), ctx)));
  return add(ce, scale(gap, static_cast<S>(lambda)));
}

template <typename S>
Tensor<S> jem_loss(const Model<S>& model, const Tensor<S>& x, std::span<const int> labels, const JemConfig& cfg,
                   std::mt19937_64& rng, ForwardContext<S>& ctx, SgldStats* stats) {
  if (cfg.energy_weight == 0.0) return jem_loss_with_negatives(model, x, labels, Tensor<S>(), 0.0, ctx);
  Tensor<S> negatives = sgld_sample(model, cfg, rng, x.shape(), stats);
  return jem_loss_with_negatives(model, x, labels, negatives, cfg.energy_weight, ctx);
}

template <typename S>
Tensor<S> JemModel<S>::initial_negatives(const Shape& shape, std::mt19937_64& rng) const {
  const JemConfig& cfg = this->spec().jem;
  const Index per = numel(shape) / shape[0];
  std::uniform_real_distribution<double> uniform(cfg.pixel_lo, cfg.pixel_hi);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Array<S> x(numel(shape));
  for (Index b = 0; b < shape[0]; ++b) {
    if (!replay_.empty() && coin(rng) >= cfg.replay_reinit) {
      std::uniform_int_distribution<std::size_t> pick(0, replay_.size() - 1);
      x.segment(b * per, per) = replay_[pick(rng)];
    } else {
      for (Index i = 0; i < per; ++i) x[b * per + i] = static_cast<S>(uniform(rng));
    }
  }
  return Tensor<S>::from(shape, std::move(x));
}

template <typename S>
void JemModel<S>::remember(const Tensor<S>& samples, std::mt19937_64&) const {
  const Index batch = samples.dim(0);
  const Index per = samples.size() / batch;
  for (Index b = 0; b < batch; ++b) {
    replay_.push_back(samples.value().segment(b * per, per));
    if (static_cast<Index>(replay_.size()) > this->spec().jem.replay_capacity) replay_.pop_front();
  }
}

template <typename S>
Tensor<S> JemModel<S>::loss(const Tensor<S>& images, std::span<const int> labels, ForwardContext<S>& ctx) const {
  const JemConfig& cfg = this->spec().jem;
  if (!ctx.training || cfg.energy_weight == 0.0) return jem_loss_with_negatives(*this, images, labels, Tensor<S>(), 0.0, ctx);
  std::mt19937_64& rng = ctx.dropout_rng();
  Tensor<S> negatives;
  if (cfg.replay_buffer) {
    Tensor<S> init = initial_negatives(images.shape(), rng);
    negatives = sgld_sample(*this, cfg, rng, images.shape(), &stats_, &init);
    remember(negatives, rng);
  } else {
    negatives = sgld_sample(*this, cfg, rng, images.shape(), &stats_);
  }
  return jem_loss_with_negatives(*this, images, labels, negatives, cfg.energy_weight, ctx);
}

#define PETBENCH_INSTANTIATE(S)                                                                                     \
  template Tensor<S> energy_from_logits(const Tensor<S>&);                                                         \
  template Tensor<S> jem_marginal_energy(const Model<S>&, const Tensor<S>&, ForwardContext<S>&);                   \
  template Tensor<S> sgld_sample(const Model<S>&, const JemConfig&, std::mt19937_64&, const Shape&, SgldStats*,    \
                                 const Tensor<S>*);                                                                 \
  template Tensor<S> jem_loss_with_negatives(const Model<S>&, const Tensor<S>&, std::span<const int>,              \
                                             const Tensor<S>&, double, ForwardContext<S>&);                        \
  template Tensor<S> jem_loss(const Model<S>&, const Tensor<S>&, std::span<const int>, const JemConfig&,           \
                              std::mt19937_64&, ForwardContext<S>&, SgldStats*);                                   \
  template class JemModel<S>;

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

#pragma once

#include "petbench/models/cnn.hpp"

#include <deque>

namespace petbench {

/// Raised when the energy turns non-finite during Langevin sampling; the
/// negative batch is abandoned.
class SamplerError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct SgldStats {
  int gradient_evaluations = 0;
  int batches = 0;
};

/// E(x) = -logsumexp_y f(x)[y], one value per sample: [B].
template <typename S>
Tensor<S> jem_marginal_energy(const Model<S>& model, const Tensor<S>& x, ForwardContext<S>& ctx);
/// Energy from precomputed logits[B,K].
template <typename S>
Tensor<S> energy_from_logits(const Tensor<S>& logits);

/// Langevin chain x <- clamp(x - (eta/2) dE/dx + noise_scale * eps). Starts
/// from `init` when given, otherwise uniform over the pixel range. The model
/// runs without dropout and its stored gradients are left untouched. The
/// result is detached.
template <typename S>
Tensor<S> sgld_sample(const Model<S>& model, const JemConfig& cfg, std::mt19937_64& rng, const Shape& shape,
                      SgldStats* stats = nullptr, const Tensor<S>* init = nullptr);

/// CE(logits(x), labels) + lambda * (mean E(x) - mean E(negatives)).
template <typename S>
Tensor<S> jem_loss_with_negatives(const Model<S>& model, const Tensor<S>& x, std::span<const int> labels,
                                  const Tensor<S>& negatives, double lambda, ForwardContext<S>& ctx);
/// Draws negatives with sgld_sample, then jem_loss_with_negatives.
template <typename S>
Tensor<S> jem_loss(const Model<S>& model, const Tensor<S>& x, std::span<const int> labels, const JemConfig& cfg,
                   std::mt19937_64& rng, ForwardContext<S>& ctx, SgldStats* stats = nullptr);

/// CNN classifier trained with cross-entropy plus a contrastive energy term.
template <typename S>
class JemModel : public CnnModel<S> {
 public:
  JemModel(const ModelSpec& spec, std::mt19937_64& rng) : CnnModel<S>(spec, rng) {}

  Tensor<S> loss(const Tensor<S>& images, std::span<const int> labels, ForwardContext<S>& ctx) const override;

  const SgldStats& sampler_stats() const { return stats_; }

 private:
  Tensor<S> initial_negatives(const Shape& shape, std::mt19937_64& rng) const;
  void remember(const Tensor<S>& samples, std::mt19937_64& rng) const;

  mutable SgldStats stats_;
  mutable std::deque<Array<S>> replay_;  // one flattened image per entry
};

}  // namespace petbench

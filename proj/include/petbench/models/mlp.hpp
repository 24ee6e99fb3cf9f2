#pragma once

#include "petbench/models/model.hpp"

namespace petbench {

/// Dense -> ReLU -> dropout for every hidden width, then a dense head.
template <typename S>
class MlpModel : public Model<S> {
 public:
  MlpModel(const ModelSpec& spec, std::mt19937_64& rng);

  Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const override;

  const std::vector<DenseLayer<S>>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer<S>> layers_;
};

/// x[B, image_size^2] -> logits[B,10]
template <typename S>
Tensor<S> mlp_forward(const MlpModel<S>& model, const Tensor<S>& x, ForwardContext<S>& ctx);

}  // namespace petbench

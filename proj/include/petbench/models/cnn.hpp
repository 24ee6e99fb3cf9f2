#pragma once

#include "petbench/models/model.hpp"

namespace petbench {

/// Stages of 3x3 conv (padding 1) -> ReLU -> 2x2 max-pool, one per entry of
/// hidden_dims, then flatten -> dense(dense_dim) -> ReLU -> dropout -> dense(10).
/// Also the JEM backbone.
template <typename S>
class CnnModel : public Model<S> {
 public:
  CnnModel(const ModelSpec& spec, std::mt19937_64& rng);

  Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const override;

  /// Flattened feature width after the last pooling stage.
  Index flatten_dim() const { return flatten_dim_; }
  /// Spatial extent after each stage, starting with the input.
  const std::vector<Index>& extents() const { return extents_; }

 private:
  std::vector<Conv2dLayer<S>> convs_;
  DenseLayer<S> hidden_;
  DenseLayer<S> head_;
  std::vector<Index> extents_;
  Index flatten_dim_ = 0;
};

}  // namespace petbench

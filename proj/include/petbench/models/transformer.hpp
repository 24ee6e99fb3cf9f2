#pragma once

#include "petbench/models/model.hpp"

namespace petbench {

/// Post-norm encoder block: x = LN(x + drop(attn(x))); x = LN(x + drop(ffn(x))).
template <typename S>
struct EncoderBlock {
  AttentionParams<S> attention;
  LayerNormParams<S> norm1;
  DenseLayer<S> ff1;  // [ffn, d]
  DenseLayer<S> ff2;  // [d, ffn]
  LayerNormParams<S> norm2;

  static EncoderBlock create(Index d_model, Index heads, Index ffn);
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

template <typename S>
Tensor<S> encoder_block_forward(const EncoderBlock<S>& block, const Tensor<S>& x, double dropout,
                                ForwardContext<S>& ctx);

/// Image rows as tokens -> linear(d_model) + positional encoding -> encoder
/// blocks -> mean over tokens -> dense(10).
template <typename S>
class TransformerModel : public Model<S> {
 public:
  TransformerModel(const ModelSpec& spec, std::mt19937_64& rng);

  Tensor<S> forward(const Tensor<S>& images, ForwardContext<S>& ctx) const override;

  Index d_model() const { return this->spec().hidden_dims[0]; }
  Index tokens() const { return this->spec().image_size; }
  const std::vector<EncoderBlock<S>>& blocks() const { return blocks_; }

 private:
  DenseLayer<S> embed_;
  Tensor<S> position_;  // [T, d]; a constant unless learned
  std::vector<EncoderBlock<S>> blocks_;
  DenseLayer<S> head_;
};

}  // namespace petbench

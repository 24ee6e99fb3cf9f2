#include "petbench/models/transformer.hpp"

namespace petbench {

template <typename S>
EncoderBlock<S> EncoderBlock<S>::create(Index d_model, Index heads, Index ffn) {
  return {AttentionParams<S>::create(d_model, heads), LayerNormParams<S>::create(d_model),
          DenseLayer<S>::create(d_model, ffn), DenseLayer<S>::create(ffn, d_model),
          LayerNormParams<S>::create(d_model)};
}

template <typename S>
void EncoderBlock<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  attention.collect(prefix + ".attn", into);
  norm1.collect(prefix + ".norm1", into);
  ff1.collect(prefix + ".ff1", into);
  ff2.collect(prefix + ".ff2", into);
  norm2.collect(prefix + ".norm2", into);
}

template <typename S>
Tensor<S> encoder_block_forward(const EncoderBlock<S>& block, const Tensor<S>& x, double dropout,
                                ForwardContext<S>& ctx) {
  Tensor<S> attended = scaled_dot_attention(block.attention, x, ctx.attention);
  Tensor<S> h = layer_norm(block.norm1, add(x, ctx.dropout(attended, dropout)));
  Tensor<S> ff = dense_forward(block.ff2, relu(dense_forward(block.ff1, h)));
  return layer_norm(block.norm2, add(h, ctx.dropout(ff, dropout)));
}

namespace {

template <typename S>
void init_dense(DenseLayer<S>& layer, std::mt19937_64& rng) {
  init_xavier_uniform(layer.weight, layer.in(), layer.out(), rng);
  init_bias_uniform(layer.bias, layer.in(), rng);
}

}  // namespace

template <typename S>
TransformerModel<S>::TransformerModel(const ModelSpec& spec, std::mt19937_64& rng) : Model<S>(spec) {
  Parameters<S> params;
  const Index d = d_model();
  embed_ = DenseLayer<S>::create(spec.image_size, d);
  init_dense(embed_, rng);
  embed_.collect("embed", params);
  if (spec.positional == PositionalEncoding::learned) {
    position_ = Tensor<S>::zeros({tokens(), d}, true);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (Index i = 0; i < position_.size(); ++i) position_.mutable_value()[i] = static_cast<S>(normal(rng));
    params.push_back({"position", position_});
  } else {
    position_ = sinusoidal_positional_encoding<S>(tokens(), d);
  }
  for (int l = 0; l < spec.layers; ++l) {
    auto block = EncoderBlock<S>::create(d, spec.heads, spec.ffn_dim);
    init_dense(block.attention.query, rng);
    init_dense(block.attention.key, rng);
    init_dense(block.attention.value, rng);
    init_dense(block.attention.output, rng);
    init_dense(block.ff1, rng);
    init_dense(block.ff2, rng);
    block.collect("block" + std::to_string(l + 1), params);
    blocks_.push_back(std::move(block));
  }
  head_ = DenseLayer<S>::create(d, kNumClasses);
  init_dense(head_, rng);
  head_.collect("head", params);
  this->register_parameters(std::move(params));
}

template <typename S>
Tensor<S> TransformerModel<S>::forward(const Tensor<S>& images, ForwardContext<S>& ctx) const {
  this->check_images(images);
  const double p = this->spec().dropout;
  Tensor<S> h = add(dense_forward(embed_, rows_as_sequence(images)), position_);
  h = ctx.dropout(h, p);
  for (const auto& block : blocks_) h = encoder_block_forward(block, h, p, ctx);
  return dense_forward(head_, mean_dim(h, 1));
}

#define PETBENCH_INSTANTIATE(S)                \
  template struct EncoderBlock<S>;             \
  template class TransformerModel<S>;          \
  template Tensor<S> encoder_block_forward(const EncoderBlock<S>&, const Tensor<S>&, double, ForwardContext<S>&);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench

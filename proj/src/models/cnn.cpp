#include "petbench/models/cnn.hpp"

namespace petbench {

template <typename S>
CnnModel<S>::CnnModel(const ModelSpec& spec, std::mt19937_64& rng) : Model<S>(spec) {
  Parameters<S> params;
  Index channels = 1;
  Index extent = spec.image_size;
  extents_.push_back(extent);
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    Index out = spec.hidden_dims[i];
    auto conv = Conv2dLayer<S>::create(channels, out, 3, 1, 1);
    init_kaiming_normal(conv.kernels, channels * 9, rng);
    init_bias_uniform(conv.bias, channels * 9, rng);
    conv.collect("conv" + std::to_string(i + 1), params);
    convs_.push_back(std::move(conv));
    channels = out;
    extent /= 2;  // padding 1 keeps the extent, the pool halves it
    extents_.push_back(extent);
  }
  flatten_dim_ = channels * extent * extent;
  hidden_ = DenseLayer<S>::create(flatten_dim_, spec.dense_dim);
  init_kaiming_normal(hidden_.weight, flatten_dim_, rng);
  init_bias_uniform(hidden_.bias, flatten_dim_, rng);
  hidden_.collect("fc1", params);
  head_ = DenseLayer<S>::create(spec.dense_dim, kNumClasses);
  init_kaiming_normal(head_.weight, spec.dense_dim, rng);
  init_bias_uniform(head_.bias, spec.dense_dim, rng);
  head_.collect("fc2", params);
  this->register_parameters(std::move(params));
}

template <typename S>
Tensor<S> CnnModel<S>::forward(const Tensor<S>& images, ForwardContext<S>& ctx) const {
  Index batch = this->check_images(images);
  Tensor<S> h = images;
  for (const auto& conv : convs_) h = max_pool2d(relu(conv2d_forward(conv, h)), 2);
  h = reshape(h, {batch, flatten_dim_});
  h = ctx.dropout(relu(dense_forward(hidden_, h)), this->spec().dropout);
  return dense_forward(head_, h);
}

template class CnnModel<float>;
template class CnnModel<double>;

}  // namespace petbench

#include "petbench/models/mlp.hpp"

namespace petbench {

template <typename S>
MlpModel<S>::MlpModel(const ModelSpec& spec, std::mt19937_64& rng) : Model<S>(spec) {
  Parameters<S> params;
  Index in = spec.image_size * spec.image_size;
  std::vector<Index> widths = spec.hidden_dims;
  widths.push_back(kNumClasses);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    auto layer = DenseLayer<S>::create(in, widths[i]);
    init_xavier_uniform(layer.weight, in, widths[i], rng);
    init_bias_uniform(layer.bias, in, rng);
    layer.collect("fc" + std::to_string(i + 1), params);
    layers_.push_back(std::move(layer));
    in = widths[i];
  }
  this->register_parameters(std::move(params));
}

template <typename S>
Tensor<S> MlpModel<S>::forward(const Tensor<S>& images, ForwardContext<S>& ctx) const {
  Index batch = this->check_images(images);
  return mlp_forward(*this, reshape(images, {batch, images.size() / batch}), ctx);
}

template <typename S>
Tensor<S> mlp_forward(const MlpModel<S>& model, const Tensor<S>& x, ForwardContext<S>& ctx) {
  const auto& layers = model.layers();
  if (x.ndim() != 2 || x.dim(1) != layers.front().in()) {
    throw ShapeError("MLP expects [B," + std::to_string(layers.front().in()) + "], got " + to_string(x.shape()));
  }
  Tensor<S> h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = ctx.dropout(relu(dense_forward(layers[i], h)), model.spec().dropout);
  }
  return dense_forward(layers.back(), h);
}

template class MlpModel<float>;
template class MlpModel<double>;
template Tensor<float> mlp_forward(const MlpModel<float>&, const Tensor<float>&, ForwardContext<float>&);
template Tensor<double> mlp_forward(const MlpModel<double>&, const Tensor<double>&, ForwardContext<double>&);

}  // namespace petbench

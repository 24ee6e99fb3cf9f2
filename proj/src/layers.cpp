#include "petbench/layers.hpp"

#include <Eigen/QR>

#include <cmath>

namespace petbench {

std::string_view name(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::silu: return "silu";
  }
  return "?";
}

Activation parse_activation(std::string_view n) {
  for (auto a : {Activation::sigmoid, Activation::tanh, Activation::relu, Activation::gelu, Activation::silu}) {
    if (name(a) == n) return a;
  }
  throw std::invalid_argument("unknown activation kind '" + std::string(n) + "'");
}

template <typename S>
Tensor<S> activation(Activation kind, const Tensor<S>& x) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
    case Activation::gelu: return gelu(x);
    case Activation::silu: return silu(x);
  }
  throw std::invalid_argument("unknown activation kind");
}

template <typename S>
Index parameter_count(const Parameters<S>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

template <typename S>
void init_xavier_uniform(Tensor<S>& t, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t.mutable_value()[i] = static_cast<S>(dist(rng));
}

template <typename S>
void init_bias_uniform(Tensor<S>& t, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t.mutable_value()[i] = static_cast<S>(dist(rng));
}

template <typename S>
void init_kaiming_normal(Tensor<S>& t, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Index i = 0; i < t.size(); ++i) t.mutable_value()[i] = static_cast<S>(dist(rng));
}

template <typename S>
void init_orthogonal(Tensor<S>& t, std::mt19937_64& rng) {
  if (t.ndim() != 2) throw ShapeError("orthogonal init needs a 2-d tensor, got " + to_string(t.shape()));
  const Index rows = t.dim(0), cols = t.dim(1);
  const bool tall = rows >= cols;
  const Index n = tall ? rows : cols, m = tall ? cols : rows;
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(n, m);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) a(i, j) = dist(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);
  // Sign fix makes the draw uniform over orthogonal matrices.
  Eigen::MatrixXd r = qr.matrixQR().topRows(m).template triangularView<Eigen::Upper>();
  for (Index j = 0; j < m; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  MatrixMap<S> out(t.mutable_value().data(), rows, cols);
  if (tall) {
    out = q.cast<S>();
  } else {
    out = q.transpose().cast<S>();
  }
}

template <typename S>
DenseLayer<S> DenseLayer<S>::create(Index in, Index out, bool with_bias) {
  DenseLayer layer;
  layer.weight = Tensor<S>::zeros({out, in}, true);
  if (with_bias) layer.bias = Tensor<S>::zeros({out}, true);
  return layer;
}

template <typename S>
void DenseLayer<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  into.push_back({prefix + ".weight", weight});
  if (bias.defined()) into.push_back({prefix + ".bias", bias});
}

template <typename S>
Tensor<S> dense_forward(const DenseLayer<S>& layer, const Tensor<S>& x) {
  return linear(x, layer.weight, layer.bias);
}

template <typename S>
Conv2dLayer<S> Conv2dLayer<S>::create(Index in_ch, Index out_ch, Index kernel, Index stride, Index padding) {
  Conv2dLayer layer;
  layer.kernels = Tensor<S>::zeros({out_ch, in_ch, kernel, kernel}, true);
  layer.bias = Tensor<S>::zeros({out_ch}, true);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

template <typename S>
void Conv2dLayer<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  into.push_back({prefix + ".kernels", kernels});
  into.push_back({prefix + ".bias", bias});
}

template <typename S>
Tensor<S> conv2d_forward(const Conv2dLayer<S>& layer, const Tensor<S>& x) {
  return conv2d(x, layer.kernels, layer.bias, layer.stride, layer.padding);
}

template <typename S>
LayerNormParams<S> LayerNormParams<S>::create(Index d) {
  LayerNormParams p;
  p.gamma = Tensor<S>::full({d}, S(1), true);
  p.beta = Tensor<S>::zeros({d}, true);
  return p;
}

template <typename S>
void LayerNormParams<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  into.push_back({prefix + ".gamma", gamma});
  into.push_back({prefix + ".beta", beta});
}

template <typename S>
Tensor<S> layer_norm(const LayerNormParams<S>& params, const Tensor<S>& x) {
  return layer_norm(x, params.gamma, params.beta, params.eps);
}

template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  return cross_entropy(logits, labels);
}

template <typename S>
AttentionParams<S> AttentionParams<S>::create(Index d_model, Index heads) {
  if (heads <= 0 || d_model % heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(heads) +
                                " heads");
  }
  AttentionParams p;
  p.query = DenseLayer<S>::create(d_model, d_model);
  p.key = DenseLayer<S>::create(d_model, d_model);
  p.value = DenseLayer<S>::create(d_model, d_model);
  p.output = DenseLayer<S>::create(d_model, d_model);
  p.heads = heads;
  p.d_model = d_model;
  return p;
}

template <typename S>
void AttentionParams<S>::collect(const std::string& prefix, Parameters<S>& into) const {
  query.collect(prefix + ".query", into);
  key.collect(prefix + ".key", into);
  value.collect(prefix + ".value", into);
  output.collect(prefix + ".output", into);
}

template <typename S>
Tensor<S> scaled_dot_attention(const AttentionParams<S>& params, const Tensor<S>& tokens, AttentionProbe<S>* probe) {
  if (tokens.ndim() != 3 || tokens.dim(2) != params.d_model) {
    throw ShapeError("attention expects [B,T," + std::to_string(params.d_model) + "], got " +
                     to_string(tokens.shape()));
  }
  const Index dk = params.d_model / params.heads;
  Tensor<S> q = dense_forward(params.query, tokens);
  Tensor<S> k = dense_forward(params.key, tokens);
  Tensor<S> v = dense_forward(params.value, tokens);
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dk));
  std::vector<Tensor<S>> heads;
  heads.reserve(static_cast<std::size_t>(params.heads));
  for (Index h = 0; h < params.heads; ++h) {
    Tensor<S> qh = slice(q, 2, h * dk, dk);
    Tensor<S> kh = slice(k, 2, h * dk, dk);
    Tensor<S> vh = slice(v, 2, h * dk, dk);
    Tensor<S> weights = softmax_last(scale(bmm(qh, kh, true), inv_sqrt));
    if (probe) {
      probe->weights.push_back(weights.value());
      probe->tokens = tokens.dim(1);
    }
    heads.push_back(bmm(weights, vh));
  }
  Tensor<S> merged = params.heads == 1 ? heads.front() : concat(heads, 2);
  return dense_forward(params.output, merged);
}

template <typename S>
Tensor<S> sinusoidal_positional_encoding(Index tokens, Index d_model) {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw std::invalid_argument("positional encoding needs an even d_model, got " + std::to_string(d_model));
  }
  Array<S> pe(tokens * d_model);
  for (Index pos = 0; pos < tokens; ++pos) {
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = static_cast<S>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<S>(std::cos(angle));
    }
  }
  return Tensor<S>::from({tokens, d_model}, std::move(pe));
}

#define PETBENCH_INSTANTIATE_LAYERS(S)                                                                 \
  template Tensor<S> activation(Activation, const Tensor<S>&);                                        \
  template Index parameter_count(const Parameters<S>&);                                               \
  template void init_xavier_uniform(Tensor<S>&, Index, Index, std::mt19937_64&);                      \
  template void init_kaiming_normal(Tensor<S>&, Index, std::mt19937_64&);                             \
  template void init_bias_uniform(Tensor<S>&, Index, std::mt19937_64&);                               \
  template void init_orthogonal(Tensor<S>&, std::mt19937_64&);                                       \
  template struct DenseLayer<S>;                                                                      \
  template Tensor<S> dense_forward(const DenseLayer<S>&, const Tensor<S>&);                           \
  template struct Conv2dLayer<S>;                                                                     \
  template Tensor<S> conv2d_forward(const Conv2dLayer<S>&, const Tensor<S>&);                         \
  template struct LayerNormParams<S>;                                                                 \
  template Tensor<S> layer_norm(const LayerNormParams<S>&, const Tensor<S>&);                         \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, std::span<const int>);                   \
  template struct AttentionParams<S>;                                                                 \
  template Tensor<S> scaled_dot_attention(const AttentionParams<S>&, const Tensor<S>&, AttentionProbe<S>*); \
  template Tensor<S> sinusoidal_positional_encoding(Index, Index);

PETBENCH_INSTANTIATE_LAYERS(float)
PETBENCH_INSTANTIATE_LAYERS(double)

}  // namespace petbench

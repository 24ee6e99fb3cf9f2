#pragma once

#include "petbench/ops.hpp"
#include "petbench/tensor.hpp"

#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace petbench {

enum class Activation { sigmoid, tanh, relu, gelu, silu };

std::string_view name(Activation a);
/// Throws std::invalid_argument for names outside sigmoid|tanh|relu|gelu|silu.
Activation parse_activation(std::string_view name);

template <typename S>
Tensor<S> activation(Activation kind, const Tensor<S>& x);

template <typename S>
struct NamedParameter {
  std::string name;
  Tensor<S> tensor;
};

template <typename S>
using Parameters = std::vector<NamedParameter<S>>;

template <typename S>
Index parameter_count(const Parameters<S>& params);

// Initializers write into an existing leaf tensor.
template <typename S>
void init_xavier_uniform(Tensor<S>& t, Index fan_in, Index fan_out, std::mt19937_64& rng);
template <typename S>
void init_kaiming_normal(Tensor<S>& t, Index fan_in, std::mt19937_64& rng);
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for layer biases.
/// Zero biases leave a LayerNorm fed by a blank input with a constant
/// vector, whose backward gain is 1/sqrt(eps).
template <typename S>
void init_bias_uniform(Tensor<S>& t, Index fan_in, std::mt19937_64& rng);
/// Row-orthonormal (or column-orthonormal when rows > cols) 2-d matrix.
template <typename S>
void init_orthogonal(Tensor<S>& t, std::mt19937_64& rng);

template <typename S>
struct DenseLayer {
  Tensor<S> weight;  // [out, in]
  Tensor<S> bias;    // [out], may be undefined for bias-free maps

  static DenseLayer create(Index in, Index out, bool with_bias = true);
  Index in() const { return weight.dim(1); }
  Index out() const { return weight.dim(0); }
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

/// x[batch, in] -> x W^T + b
template <typename S>
Tensor<S> dense_forward(const DenseLayer<S>& layer, const Tensor<S>& x);

template <typename S>
struct Conv2dLayer {
  Tensor<S> kernels;  // [out_ch, in_ch, k, k]
  Tensor<S> bias;     // [out_ch]
  Index stride = 1;
  Index padding = 1;

  static Conv2dLayer create(Index in_ch, Index out_ch, Index kernel, Index stride = 1, Index padding = 1);
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

template <typename S>
Tensor<S> conv2d_forward(const Conv2dLayer<S>& layer, const Tensor<S>& x);

template <typename S>
struct LayerNormParams {
  Tensor<S> gamma;
  Tensor<S> beta;
  S eps = S(1e-5);

  static LayerNormParams create(Index d);
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

template <typename S>
Tensor<S> layer_norm(const LayerNormParams<S>& params, const Tensor<S>& x);

/// Mean cross-entropy of integer labels in [0, K) under softmax(logits).
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::span<const int> labels);

template <typename S>
struct AttentionParams {
  DenseLayer<S> query, key, value, output;
  Index heads = 1;
  Index d_model = 0;

  static AttentionParams create(Index d_model, Index heads);
  void collect(const std::string& prefix, Parameters<S>& into) const;
};

/// Optional capture of attention weights, one [B,T,T] block per head and call.
template <typename S>
struct AttentionProbe {
  std::vector<Array<S>> weights;
  Index tokens = 0;
};

/// Multi-head self-attention over tokens[B,T,d_model] with per-head width
/// d_model / heads; every query row of softmax(QK^T / sqrt(d_k)) sums to 1.
template <typename S>
Tensor<S> scaled_dot_attention(const AttentionParams<S>& params, const Tensor<S>& tokens,
                               AttentionProbe<S>* probe = nullptr);

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
template <typename S>
Tensor<S> sinusoidal_positional_encoding(Index tokens, Index d_model);

}  // namespace petbench

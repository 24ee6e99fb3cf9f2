#pragma once

#include "petbench/tensor.hpp"

#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace petbench {

enum class UnaryOp { neg, exp, log, square, sigmoid, tanh, relu, gelu, silu, softplus };
enum class BinaryOp { add, sub, mul, div };

std::string_view name(UnaryOp op);
/// Throws std::invalid_argument for an unknown name.
UnaryOp parse_unary_op(std::string_view name);

// Binary ops accept equal shapes, a scalar operand, or an operand whose shape
// is a trailing suffix of the other's (e.g. [B,T,D] with [D]).
template <typename S>
Tensor<S> elementwise(BinaryOp op, const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> elementwise(UnaryOp op, const Tensor<S>& a);

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(BinaryOp::mul, a, b); }
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) { return elementwise(BinaryOp::div, a, b); }

template <typename S>
Tensor<S> neg(const Tensor<S>& a) { return elementwise(UnaryOp::neg, a); }
template <typename S>
Tensor<S> exp(const Tensor<S>& a) { return elementwise(UnaryOp::exp, a); }
template <typename S>
Tensor<S> log(const Tensor<S>& a) { return elementwise(UnaryOp::log, a); }
template <typename S>
Tensor<S> square(const Tensor<S>& a) { return elementwise(UnaryOp::square, a); }
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) { return elementwise(UnaryOp::sigmoid, a); }
template <typename S>
Tensor<S> tanh(const Tensor<S>& a) { return elementwise(UnaryOp::tanh, a); }
template <typename S>
Tensor<S> relu(const Tensor<S>& a) { return elementwise(UnaryOp::relu, a); }
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) { return elementwise(UnaryOp::gelu, a); }
template <typename S>
Tensor<S> silu(const Tensor<S>& a) { return elementwise(UnaryOp::silu, a); }
template <typename S>
Tensor<S> softplus(const Tensor<S>& a) { return elementwise(UnaryOp::softplus, a); }

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor);
template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S offset);

/// [m,k] x [k,n] -> [m,n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// x[...,in] * W[out,in]^T + bias[out]. `bias` may be undefined.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);
/// Batched product: [B,m,k] x [B,k,n] -> [B,m,n], or with `transpose_b`
/// [B,m,k] x [B,n,k]^T -> [B,m,n].
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false);

template <typename S>
Tensor<S> sum(const Tensor<S>& x);
template <typename S>
Tensor<S> mean(const Tensor<S>& x);
/// Mean over one dimension, which is removed.
template <typename S>
Tensor<S> mean_dim(const Tensor<S>& x, int dim);

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S>
Tensor<S> slice(const Tensor<S>& x, int dim, Index start, Index length);
/// Picks one index along `dim` and drops that dimension.
template <typename S>
Tensor<S> select(const Tensor<S>& x, int dim, Index index);
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int dim);

template <typename S>
Tensor<S> softmax_last(const Tensor<S>& x);
template <typename S>
Tensor<S> log_softmax_last(const Tensor<S>& x);
/// logsumexp over the last dimension, which is removed.
template <typename S>
Tensor<S> logsumexp_last(const Tensor<S>& x);

/// Mean negative log-likelihood of `labels` under softmax(logits[B,K]).
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels);

/// Normalizes over the last dimension, then applies gamma and beta.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps);

/// Cross-correlation of x[B,C,H,W] with weight[O,C,k,k] plus bias[O].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Index stride, Index padding);
/// Non-overlapping max pooling; trailing rows/cols that do not fill a window
/// are dropped. Ties route the gradient to the first index in row-major order.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, Index window);

/// Inverted dropout. Identity when `training` is false or p == 0.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, bool training, std::mt19937_64& rng);
/// Multiplies by a fixed 0/1 (or scaled) mask; the mask is a constant.
template <typename S>
Tensor<S> apply_mask(const Tensor<S>& x, const Array<S>& mask);

/// 1 where x <= 0, else 0. The result never carries a gradient.
template <typename S>
Tensor<S> indicator_nonpositive(const Tensor<S>& x);

/// Gaussian radial basis exp(-((x - g_j) / width)^2); appends a dimension of
/// size grid.size().
template <typename S>
Tensor<S> rbf_basis(const Tensor<S>& x, std::span<const double> grid, double width);
/// B-spline bases of the given order over `knots` (Cox-de Boor); appends a
/// dimension of size knots.size() - order - 1.
template <typename S>
Tensor<S> bspline_basis(const Tensor<S>& x, std::span<const double> knots, int order);

/// Scalar Cox-de Boor evaluation, used by bspline_basis. Writes
/// knots.size() - order - 1 values, and their derivatives when `deriv` is
/// non-empty. Intervals are half-open [t_i, t_{i+1}).
void bspline_eval(double x, std::span<const double> knots, int order, std::span<double> values,
                  std::span<double> deriv = {});

}  // namespace petbench
